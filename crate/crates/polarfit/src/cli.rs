//! Batch command-line interface: dataset synthesis, calibration, fitting,
//! rendering, evaluation and gradient checking.
//!
//! Subcommands: synth | fit | render | calibrate-light | calibrate-color |
//! eval | gradcheck. Settings come from an optional `key = value` config
//! file (`--config PATH`) plus flag overrides; unknown keys are rejected.
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
//! failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::brdf::Mode;
use crate::camera::{Polarization, ViewRole};
use crate::error::{Error, Result};
use crate::grad::{self, GradCheckConfig, PixelWeights};
use crate::image;
use crate::optim::{LossRecord, ScheduleConfig};
use crate::pipeline::{self, AttenuationCalibrationConfig};
use crate::raster;
use crate::scene;
use crate::synth::{self, SynthConfig, SynthGeometry};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Parse { .. } | Error::Data(_) => EXIT_DATA,
        Error::Numerical(_) => EXIT_NUMERICAL,
    }
}

/// Key/value settings merged from a config file and flag overrides. Every
/// key must be consumed by the subcommand; leftovers are config errors
/// naming the key.
struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    fn load(config_path: Option<&Path>, overrides: &[(String, String)]) -> Result<Settings> {
        let mut values = BTreeMap::new();
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (line_no, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(Error::config(format!(
                        "{}:{}: expected 'key = value'",
                        path.display(),
                        line_no + 1
                    )));
                };
                values.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        for (k, v) in overrides {
            values.insert(k.clone(), v.clone());
        }
        Ok(Settings { values })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.values.remove(key)
    }

    fn take_str(&mut self, key: &str, default: &str) -> String {
        self.take(key).unwrap_or_else(|| default.to_string())
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::config(format!("bad value for {key}: {raw:?}"))),
        }
    }

    fn take_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key).as_deref() {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(other) => Err(Error::config(format!("bad value for {key}: {other:?}"))),
        }
    }

    fn take_usize_list(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.take(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| Error::config(format!("bad value for {key}: {raw:?}")))
                })
                .collect(),
        }
    }

    fn take_f64_triple(&mut self, key: &str, default: [f64; 3]) -> Result<[f64; 3]> {
        match self.take(key) {
            None => Ok(default),
            Some(raw) => {
                let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(Error::config(format!("{key} needs three comma-separated values")));
                }
                let mut out = [0.0; 3];
                for (o, p) in out.iter_mut().zip(parts.iter()) {
                    *o = p
                        .parse()
                        .map_err(|_| Error::config(format!("bad value for {key}: {raw:?}")))?;
                }
                Ok(out)
            }
        }
    }

    fn take_path(&mut self, key: &str) -> Result<PathBuf> {
        self.take(key)
            .map(PathBuf::from)
            .ok_or_else(|| Error::config(format!("missing required setting: {key}")))
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.values.keys().next() {
            return Err(Error::config(format!("unknown setting: {key}")));
        }
        Ok(())
    }
}

fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut csv = String::from("level,iter,lr,photometric,regularizer,total\n");
    for r in history {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.level, r.iter, r.lr, r.photometric, r.regularizer, r.total
        ));
    }
    std::fs::write(path, csv).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::data(format!("serialization: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn parse_schedule(settings: &mut Settings, seed: u64) -> Result<ScheduleConfig> {
    let levels = settings.take_usize_list("levels", &[64, 128, 256])?;
    let mut iters = settings.take_usize_list("iters", &[350])?;
    if iters.len() == 1 {
        iters = vec![iters[0]; levels.len()];
    }
    let schedule = ScheduleConfig {
        levels,
        iters_per_level: iters,
        batch_size: settings.take_parsed("batch_size", 4usize)?,
        lr0: settings.take_parsed("lr0", 1e-3)?,
        lambda_tv: settings.take_parsed("lambda_tv", 1e-2)?,
        lambda_zero: settings.take_parsed("lambda_zero", 1e-3)?,
        seed,
    };
    schedule.validate()?;
    Ok(schedule)
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_synth(mut settings: Settings) -> Result<()> {
    let out = settings.take_path("out")?;
    let seed = settings.take_parsed("seed", 0u64)?;
    let geometry = match settings.take_str("geometry", "sphere").as_str() {
        "sphere" => SynthGeometry::Sphere,
        "blob" => SynthGeometry::Blob,
        other => return Err(Error::config(format!("unknown geometry {other:?}"))),
    };
    let config = SynthConfig {
        seed,
        n_views: settings.take_parsed("n_views", 48usize)?,
        image_size: settings.take_parsed("image_size", 512usize)?,
        texture_resolution: settings.take_parsed("texture_resolution", 256usize)?,
        sphere_subdivisions: settings.take_parsed("sphere_subdivisions", 48usize)?,
        geometry,
        orbit_radius: settings.take_parsed("orbit_radius", 2.0)?,
        fov_deg: settings.take_parsed("fov_deg", 24.0)?,
        cap_half_angle_deg: settings.take_parsed("cap_half_angle_deg", 55.0)?,
        noise_sigma: settings.take_parsed("noise_sigma", 0.002)?,
        light_intensity: settings.take_parsed("light_intensity", 10.0)?,
        diffuse_scale: settings.take_f64_triple("diffuse_scale", [1.0, 1.0, 1.0])?,
        vignette: settings.take_bool("vignette", false)?,
        look_jitter: settings.take_parsed("look_jitter", 0.0)?,
    };
    settings.finish()?;

    let scene_data = synth::make_scene(&config);
    let dataset = synth::render_dataset(&scene_data)?;
    let manifest = scene::save_dataset(&out, &dataset, config.light_intensity)?;
    // ground truth goes alongside so scoring never depends on re-generation
    scene::save_textures(&out.join("gt"), &scene_data.gt)?;
    eprintln!(
        "synth: {} views -> {}",
        dataset.views.len(),
        manifest.display()
    );
    Ok(())
}

fn cmd_fit(mut settings: Settings) -> Result<()> {
    let manifest = settings.take_path("manifest")?;
    let out = settings.take_path("out")?;
    let stage = settings.take_str("stage", "both");
    let seed = settings.take_parsed("seed", 0u64)?;
    let schedule = parse_schedule(&mut settings, seed)?;
    let run_stage1 = matches!(stage.as_str(), "1" | "both");
    let run_stage2 = matches!(stage.as_str(), "2" | "both");
    if !run_stage1 && !run_stage2 {
        return Err(Error::config(format!("bad stage {stage:?}: expected 1, 2 or both")));
    }
    let stage1_override = settings.take("stage1_dir");
    settings.finish()?;

    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let dataset = scene::load_dataset(&manifest)?;

    let stage1_textures = if run_stage1 {
        eprintln!("fit: stage 1 on {} cross views", dataset.views_of(Polarization::Cross, ViewRole::Train).len());
        let result = pipeline::stage1_fit(&dataset, &schedule)?;
        scene::save_textures(&out.join("stage1"), &result.textures)?;
        write_loss_csv(&out.join("loss_stage1.csv"), &result.history)?;
        result.textures
    } else {
        let dir = match stage1_override {
            Some(p) => PathBuf::from(p),
            None => out.join("stage1"),
        };
        scene::load_textures(&dir)?
    };

    let final_textures = if run_stage2 {
        eprintln!("fit: stage 2 on {} parallel views", dataset.views_of(Polarization::Parallel, ViewRole::Train).len());
        let mut schedule2 = schedule.clone();
        schedule2.seed = seed.wrapping_add(1);
        let result = pipeline::stage2_fit(&dataset, &stage1_textures, &schedule2)?;
        scene::save_textures(&out.join("stage2"), &result.textures)?;
        write_loss_csv(&out.join("loss_stage2.csv"), &result.history)?;
        result.textures
    } else {
        stage1_textures.clone()
    };

    scene::save_textures(&out.join("textures"), &final_textures)?;
    // evaluate the textures as written (f32 on disk) so `eval` on the same
    // directory reproduces these numbers exactly
    let saved = scene::load_textures(&out.join("textures"))?;
    let metrics = pipeline::evaluate_holdout(&saved, &dataset)?;
    write_json(&out.join("metrics.json"), &metrics)?;
    eprintln!(
        "fit: holdout psnr {:.2} dB ssim {:.4}",
        metrics.mean_psnr_db, metrics.mean_ssim
    );
    Ok(())
}

fn cmd_render(mut settings: Settings) -> Result<()> {
    let manifest = settings.take_path("manifest")?;
    let textures_dir = settings.take_path("textures")?;
    let out = settings.take_path("out")?;
    let which = settings.take_str("views", "all");
    settings.finish()?;

    let dataset = scene::load_dataset(&manifest)?;
    let textures = scene::load_textures(&textures_dir)?;
    let indices: Vec<usize> = if which == "all" {
        (0..dataset.views.len()).collect()
    } else {
        which
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::config(format!("bad view index {t:?}")))
            })
            .collect::<Result<Vec<usize>>>()?
    };
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    for idx in indices {
        let view = dataset
            .views
            .get(idx)
            .ok_or_else(|| Error::data(format!("view {idx} not in manifest")))?;
        let gb = raster::rasterize(&dataset.mesh, &view.camera)?;
        let img = raster::shade(
            &gb,
            &textures,
            [view.light_intensity; 3],
            &dataset.attenuation,
            Mode::from(view.polarization),
        )?;
        let stem = format!("render_{:03}_{}", idx, view.polarization.as_str());
        image::write_pfm(&out.join(format!("{stem}.pfm")), &img)?;
        image::write_png(&out.join(format!("{stem}.png")), &img)?;
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct CalibrationReport {
    center_mean: f64,
    warnings: Vec<String>,
    gt_mean_abs_error: Option<f64>,
}

fn cmd_calibrate_light(mut settings: Settings) -> Result<()> {
    let manifest = settings.take_path("manifest")?;
    let out = settings.take_path("out")?;
    let config = AttenuationCalibrationConfig {
        texture_resolution: settings.take_parsed("texture_resolution", 128usize)?,
        iterations: settings.take_parsed("iterations", 1500usize)?,
        batch_size: settings.take_parsed("batch_size", 4usize)?,
        lr0: settings.take_parsed("lr0", 3e-3)?,
        seed: settings.take_parsed("seed", 0u64)?,
        coverage_warning: settings.take_parsed("coverage_warning", 0.5)?,
    };
    let gt_map_path = settings.take("gt_attenuation").map(PathBuf::from);
    settings.finish()?;

    let dataset = scene::load_dataset(&manifest)?;
    let views = dataset.views_of(Polarization::Cross, ViewRole::Train);
    if views.is_empty() {
        return Err(Error::data("calibration manifest has no cross-polarized train views"));
    }
    let result = pipeline::calibrate_attenuation(&views, &dataset.mesh, &config)?;
    for warning in &result.warnings {
        eprintln!("calibrate-light: warning: {warning}");
    }

    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    image::write_pfm(&out.join("attenuation.pfm"), &result.attenuation.to_image())?;
    image::write_png(&out.join("attenuation.png"), &result.attenuation.to_image())?;
    write_loss_csv(&out.join("loss_calibration.csv"), &result.history)?;

    // optional accuracy report against a known ground-truth map
    let gt_mae = match gt_map_path {
        Some(path) => {
            let gt = raster::AttenuationMap::from_image(&image::read_pfm(&path)?);
            if gt.width != result.attenuation.width || gt.height != result.attenuation.height {
                return Err(Error::data("gt attenuation dimensions differ"));
            }
            let mut sum = 0.0;
            let mut n = 0usize;
            for (p, (a, b)) in result.attenuation.data.iter().zip(gt.data.iter()).enumerate() {
                if result.observations[p % (gt.width * gt.height)] >= 3 {
                    sum += (a - b).abs();
                    n += 1;
                }
            }
            let mae = if n > 0 { sum / n as f64 } else { f64::NAN };
            eprintln!("calibrate-light: MAE vs ground truth over {}-view pixels: {:.4}", 3, mae);
            Some(mae)
        }
        None => None,
    };

    let w = result.attenuation.width;
    let h = result.attenuation.height;
    let half_w = ((0.1f64).sqrt() * w as f64 / 2.0).round() as usize;
    let half_h = ((0.1f64).sqrt() * h as f64 / 2.0).round() as usize;
    let mut center_sum = 0.0;
    let mut center_n = 0usize;
    for y in h / 2 - half_h..h / 2 + half_h {
        for x in w / 2 - half_w..w / 2 + half_w {
            center_sum += result.attenuation.data[y * w + x];
            center_n += 1;
        }
    }
    let report = CalibrationReport {
        center_mean: center_sum / center_n.max(1) as f64,
        warnings: result.warnings.clone(),
        gt_mean_abs_error: gt_mae,
    };
    write_json(&out.join("calibration_report.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}

fn read_patches(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut patches = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::parse(
                path,
                format!("line {}: expected 3 values", line_no + 1),
            ));
        }
        let mut rgb = [0.0; 3];
        for (v, p) in rgb.iter_mut().zip(parts.iter()) {
            *v = p
                .parse()
                .map_err(|_| Error::parse(path, format!("line {}: bad number {p:?}", line_no + 1)))?;
        }
        patches.push(rgb);
    }
    Ok(patches)
}

fn cmd_calibrate_color(mut settings: Settings) -> Result<()> {
    let measured_path = settings.take_path("measured")?;
    let reference_path = settings.take_path("reference")?;
    let out = settings.take_path("out")?;
    settings.finish()?;

    let measured = read_patches(&measured_path)?;
    let reference = read_patches(&reference_path)?;
    let affine = pipeline::fit_color_affine(&measured, &reference)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let path = out.join("color_affine.json");
    affine.save(&path)?;
    eprintln!("calibrate-color: wrote {}", path.display());
    Ok(())
}

fn cmd_eval(mut settings: Settings) -> Result<()> {
    let manifest = settings.take_path("manifest")?;
    let textures_dir = settings.take_path("textures")?;
    let out = settings.take_path("out")?;
    settings.finish()?;

    let dataset = scene::load_dataset(&manifest)?;
    let textures = scene::load_textures(&textures_dir)?;
    let metrics = pipeline::evaluate_holdout(&textures, &dataset)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_json(&out.join("metrics.json"), &metrics)?;
    println!("{}", serde_json::to_string_pretty(&metrics).unwrap());
    Ok(())
}

fn cmd_gradcheck(mut settings: Settings) -> Result<()> {
    let config = GradCheckConfig {
        samples_per_map: settings.take_parsed("samples", 100usize)?,
        h_texel: settings.take_parsed("h_texel", 1e-4)?,
        h_scalar: settings.take_parsed("h_scalar", 1e-5)?,
        threshold: settings.take_parsed("threshold", 1e-3)?,
        seed: settings.take_parsed("seed", 7u64)?,
        corrupt_ks: settings.take_parsed("corrupt_ks", 1.0)?,
    };
    let report_path = settings.take("out").map(PathBuf::from);
    settings.finish()?;

    // self-contained scene: sphere, 64x64 images, 32x32 textures
    let synth_config = SynthConfig {
        seed: config.seed,
        n_views: 4,
        image_size: 64,
        texture_resolution: 32,
        sphere_subdivisions: 16,
        noise_sigma: 0.0,
        ..SynthConfig::default()
    };
    let scene_data = synth::make_scene(&synth_config);
    let checked = synth::make_gt_textures(32, config.seed.wrapping_add(99), [0.95, 1.0, 1.05]);

    let mut gbuffers = Vec::new();
    for camera in &scene_data.cameras {
        gbuffers.push(raster::rasterize(&scene_data.mesh, camera)?);
    }
    let mut targets = Vec::new();
    for gb in &gbuffers {
        targets.push(grad::gradcheck_target(
            gb,
            &scene_data.gt,
            [synth_config.light_intensity; 3],
            &scene_data.attenuation,
            Mode::Parallel,
            3.0,
        )?);
    }
    let views: Vec<grad::CheckView<'_>> = gbuffers
        .iter()
        .zip(targets.iter())
        .map(|(gb, target)| grad::CheckView {
            gbuffer: gb,
            target,
            weights: PixelWeights::mip_weighted(gb, &checked),
        })
        .collect();

    let report = grad::finite_diff_check(
        &views,
        &checked,
        [synth_config.light_intensity; 3],
        &scene_data.attenuation,
        Mode::Parallel,
        &config,
    )?;
    for class in &report.classes {
        println!(
            "{:<14} samples {:>4}  max rel {:.3e}  mean rel {:.3e}  {}",
            class.class,
            class.samples,
            class.max_rel_error,
            class.mean_rel_error,
            if class.max_rel_error < report.threshold { "ok" } else { "FAIL" }
        );
    }
    if let Some(path) = report_path {
        write_json(&path, &report)?;
    }
    if !report.passed {
        return Err(Error::numerical(format!(
            "gradient check failed at threshold {}",
            report.threshold
        )));
    }
    println!("gradient check passed at threshold {}", report.threshold);
    Ok(())
}

// ---------------------------------------------------------------------------
// Argument parsing and dispatch
// ---------------------------------------------------------------------------

const USAGE: &str = "usage: polarfit <synth|fit|render|calibrate-light|calibrate-color|eval|gradcheck> \
[--config PATH] [--seed N] [--workers N] [--stage 1|2|both] [--out DIR] [key=value ...]";

/// Run the CLI; returns the process exit code.
pub fn run<I: IntoIterator<Item = String>>(args: I) -> i32 {
    match run_inner(args) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

fn run_inner<I: IntoIterator<Item = String>>(args: I) -> Result<()> {
    let mut args = args.into_iter();
    let Some(command) = args.next() else {
        return Err(Error::config(USAGE.to_string()));
    };

    let mut config_path: Option<PathBuf> = None;
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut workers: Option<usize> = None;
    let flag_value = |args: &mut dyn Iterator<Item = String>, flag: &str| -> Result<String> {
        args.next()
            .ok_or_else(|| Error::config(format!("{flag} needs a value")))
    };
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--config" => config_path = Some(PathBuf::from(flag_value(&mut args, "--config")?)),
            "--seed" => overrides.push(("seed".into(), flag_value(&mut args, "--seed")?)),
            "--out" => overrides.push(("out".into(), flag_value(&mut args, "--out")?)),
            "--stage" => overrides.push(("stage".into(), flag_value(&mut args, "--stage")?)),
            "--workers" => {
                let v = flag_value(&mut args, "--workers")?;
                workers = Some(
                    v.parse()
                        .map_err(|_| Error::config(format!("bad value for --workers: {v:?}")))?,
                );
            }
            other => {
                if let Some((k, v)) = other.split_once('=') {
                    overrides.push((k.trim().to_string(), v.trim().to_string()));
                } else {
                    return Err(Error::config(format!("unexpected argument {other:?}\n{USAGE}")));
                }
            }
        }
    }

    if let Some(n) = workers {
        if n > 0 {
            // results are worker-count independent; this only sizes the pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }

    let settings = Settings::load(config_path.as_deref(), &overrides)?;
    match command.as_str() {
        "synth" => cmd_synth(settings),
        "fit" => cmd_fit(settings),
        "render" => cmd_render(settings),
        "calibrate-light" => cmd_calibrate_light(settings),
        "calibrate-color" => cmd_calibrate_color(settings),
        "eval" => cmd_eval(settings),
        "gradcheck" => cmd_gradcheck(settings),
        other => Err(Error::config(format!("unknown subcommand {other:?}\n{USAGE}"))),
    }
}
