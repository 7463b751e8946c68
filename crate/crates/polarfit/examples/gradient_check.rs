//! Verify the analytic gradients of the photometric objective against
//! central finite differences on a small sphere scene, per parameter
//! class.
//!
//! Run with: cargo run --release --example gradient_check

use polarfit::brdf::Mode;
use polarfit::grad::{self, CheckView, GradCheckConfig, PixelWeights};
use polarfit::raster;
use polarfit::synth::{self, SynthConfig};

fn main() -> polarfit::Result<()> {
    let config = SynthConfig {
        seed: 5,
        n_views: 4,
        image_size: 64,
        texture_resolution: 32,
        sphere_subdivisions: 16,
        noise_sigma: 0.0,
        ..SynthConfig::default()
    };
    let scene = synth::make_scene(&config);
    // check at a texture set that differs from the target's so residuals
    // and gradients are non-trivial
    let checked = synth::make_gt_textures(32, 99, [0.95, 1.0, 1.05]);

    let mut gbuffers = Vec::new();
    let mut targets = Vec::new();
    for camera in &scene.cameras {
        let gbuffer = raster::rasterize(&scene.mesh, camera)?;
        targets.push(grad::gradcheck_target(
            &gbuffer,
            &scene.gt,
            [config.light_intensity; 3],
            &scene.attenuation,
            Mode::Parallel,
            3.0,
        )?);
        gbuffers.push(gbuffer);
    }
    let views: Vec<CheckView<'_>> = gbuffers
        .iter()
        .zip(targets.iter())
        .map(|(gbuffer, target)| CheckView {
            gbuffer,
            target,
            weights: PixelWeights::mip_weighted(gbuffer, &checked),
        })
        .collect();

    let check = GradCheckConfig::default();
    let report = grad::finite_diff_check(
        &views,
        &checked,
        [config.light_intensity; 3],
        &scene.attenuation,
        Mode::Parallel,
        &check,
    )?;
    for class in &report.classes {
        println!(
            "{:<14} {:>4} samples   max rel {:.3e}   mean rel {:.3e}",
            class.class, class.samples, class.max_rel_error, class.mean_rel_error
        );
    }
    println!(
        "\n{} at threshold {}",
        if report.passed { "PASSED" } else { "FAILED" },
        report.threshold
    );
    Ok(())
}
