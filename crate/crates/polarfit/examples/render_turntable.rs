//! Forward rendering only: shade a ground-truth sphere from a ring of
//! views in both polarization modes and write PNG previews.
//!
//! Run with: cargo run --release --example render_turntable

use polarfit::brdf::Mode;
use polarfit::raster;
use polarfit::synth::{self, OrbitConfig, SynthConfig};

fn main() -> polarfit::Result<()> {
    let scene = synth::make_scene(&SynthConfig {
        seed: 2,
        texture_resolution: 128,
        sphere_subdivisions: 32,
        ..SynthConfig::default()
    });
    let cameras = synth::make_orbit(&OrbitConfig {
        n_views: 8,
        radius: 2.0,
        cap_half_angle_deg: 40.0,
        jitter: 0.0,
        jitter_seed: 0,
        width: 256,
        height: 256,
        fov_deg: 24.0,
        look_jitter: 0.0,
    });

    let out = std::path::PathBuf::from("out-render-turntable");
    std::fs::create_dir_all(&out).ok();
    let attenuation = raster::AttenuationMap::uniform(256, 256);
    for (i, camera) in cameras.iter().enumerate() {
        let gbuffer = raster::rasterize(&scene.mesh, camera)?;
        for (mode, tag) in [(Mode::Cross, "cross"), (Mode::Parallel, "parallel")] {
            let image = raster::shade(&gbuffer, &scene.gt, [10.0; 3], &attenuation, mode)?;
            let path = out.join(format!("view_{i:02}_{tag}.png"));
            polarfit::image::write_png(&path, &image)?;
        }
    }
    println!("wrote {} PNGs to {}", cameras.len() * 2, out.display());
    println!("parallel renders show the specular blobs; cross renders do not");
    Ok(())
}
