//! Light-attenuation calibration: recover the per-pixel falloff of a
//! non-ideal flashlight from cross-polarized views of a textured plane,
//! and compare against the synthetic cos^4 vignette that generated the
//! data.
//!
//! Run with: cargo run --release --example calibrate_attenuation

use polarfit::brdf::Mode;
use polarfit::camera::{Camera, CaptureView, Polarization, ViewRole};
use polarfit::math::vec3;
use polarfit::pipeline::{calibrate_attenuation, AttenuationCalibrationConfig};
use polarfit::raster;
use polarfit::rng::Pcg32;
use polarfit::synth;
use polarfit::texture::TextureSet;

fn main() -> polarfit::Result<()> {
    let size = 160usize;
    let fx = 180.0;
    let plane = synth::make_plane(8);
    let vignette = synth::cos4_vignette(size, size, fx, fx, size as f64 / 2.0, size as f64 / 2.0);

    // plane texture with enough variation to play the role of the markers
    let mut gt = TextureSet::flat(64);
    let noise = synth::value_noise(64, 11, 6, 2);
    for (texel, n) in gt.kd.data.chunks_exact_mut(3).zip(noise.data.iter()) {
        let v = 0.3 + 0.6 * n;
        texel.copy_from_slice(&[v, v * 0.95, v * 0.9]);
    }

    // handheld-ish capture: frontal-ish cameras with varying offsets and
    // distances so the vignette sweeps across the plane
    let mut rng = Pcg32::new(4, 0);
    let mut views = Vec::new();
    for _ in 0..10 {
        let eye = vec3(rng.range_f64(-0.35, 0.35), rng.range_f64(-0.35, 0.35), -rng.range_f64(0.9, 1.5));
        let target = vec3(rng.range_f64(-0.1, 0.1), rng.range_f64(-0.1, 0.1), 0.0);
        let camera = Camera::look_at(eye, target, vec3(0.0, 1.0, 0.0), fx, fx, size, size);
        let gbuffer = raster::rasterize(&plane, &camera)?;
        let image = raster::shade(&gbuffer, &gt, [10.0; 3], &vignette, Mode::Cross)?;
        views.push(CaptureView {
            image,
            camera,
            polarization: Polarization::Cross,
            role: ViewRole::Train,
            light_intensity: 10.0,
        });
    }
    let view_refs: Vec<&CaptureView> = views.iter().collect();

    let config = AttenuationCalibrationConfig {
        texture_resolution: 64,
        iterations: 900,
        ..AttenuationCalibrationConfig::default()
    };
    println!("calibrating attenuation map from {} plane views...", views.len());
    let result = calibrate_attenuation(&view_refs, &plane, &config)?;
    for w in &result.warnings {
        println!("warning: {w}");
    }

    // accuracy over pixels observed in at least 3 views; the recovered map
    // is normalized to center-mean 1 while the raw cos^4 is not, so align
    // the gauge before comparing (the global scale belongs to k_d)
    let half = ((0.1f64).sqrt() * size as f64 / 2.0).round() as usize;
    let mut gauge = 0.0;
    let mut n_center = 0usize;
    for y in size / 2 - half..size / 2 + half {
        for x in size / 2 - half..size / 2 + half {
            gauge += vignette.data[y * size + x];
            n_center += 1;
        }
    }
    let gauge = gauge / n_center as f64;
    let mut mae = 0.0;
    let mut n = 0usize;
    for (p, (rec, truth)) in result
        .attenuation
        .data
        .iter()
        .zip(vignette.data.iter())
        .enumerate()
    {
        if result.observations[p] >= 3 {
            mae += (rec * gauge - truth).abs();
            n += 1;
        }
    }
    mae /= n as f64;
    println!("recovered vs true cos^4 vignette: MAE {:.4} over {} pixels", mae, n);

    let out = std::path::PathBuf::from("out-calibrate-attenuation");
    std::fs::create_dir_all(&out).ok();
    polarfit::image::write_pfm(&out.join("attenuation.pfm"), &result.attenuation.to_image())?;
    polarfit::image::write_png(&out.join("attenuation.png"), &result.attenuation.to_image())?;
    println!("wrote {}", out.join("attenuation.png").display());
    Ok(())
}
