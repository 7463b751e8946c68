//! Dataset disk format: a JSON manifest listing the mesh, the shared
//! attenuation map, an optional color-affine file, and one record per
//! view; images and maps are PFM, the mesh is OBJ.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, CaptureView, Polarization, ViewRole};
use crate::error::{Error, Result};
use crate::image;
use crate::mesh;
use crate::raster::AttenuationMap;
use crate::synth::Dataset;
use crate::texture::{Texture, TextureSet};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewRecord {
    pub image: String,
    pub camera_to_world: Vec<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub polarization: String,
    pub role: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub mesh: String,
    pub attenuation: String,
    #[serde(default)]
    pub color_affine: Option<String>,
    pub light_intensity: f64,
    pub views: Vec<ViewRecord>,
}

fn camera_record(view: &CaptureView, image_path: String) -> ViewRecord {
    let cam = &view.camera;
    ViewRecord {
        image: image_path,
        camera_to_world: cam.camera_to_world_matrix().to_vec(),
        fx: cam.fx,
        fy: cam.fy,
        cx: cam.cx,
        cy: cam.cy,
        width: cam.width,
        height: cam.height,
        polarization: view.polarization.as_str().to_string(),
        role: view.role.as_str().to_string(),
    }
}

/// Write a dataset under `dir`: manifest.json, mesh.obj, attenuation.pfm
/// and images/<polarization>_<index>.pfm.
pub fn save_dataset(dir: &Path, dataset: &Dataset, light_intensity: f64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
    mesh::save_obj(&dir.join("mesh.obj"), &dataset.mesh)?;
    image::write_pfm(&dir.join("attenuation.pfm"), &dataset.attenuation.to_image())?;

    let mut records = Vec::with_capacity(dataset.views.len());
    let mut counters = std::collections::HashMap::new();
    for view in &dataset.views {
        let n = counters.entry(view.polarization).or_insert(0usize);
        let rel = format!("images/{}_{:03}.pfm", view.polarization.as_str(), n);
        *n += 1;
        image::write_pfm(&dir.join(&rel), &view.image)?;
        records.push(camera_record(view, rel));
    }

    let manifest = Manifest {
        mesh: "mesh.obj".to_string(),
        attenuation: "attenuation.pfm".to_string(),
        color_affine: None,
        light_intensity,
        views: records,
    };
    let path = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::data(format!("manifest serialization: {e}")))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Load a dataset from its manifest. Paths inside the manifest are
/// resolved relative to the manifest's directory. When a color-affine file
/// is referenced, the correction is applied to every image on load.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::parse(manifest_path, format!("bad manifest: {e}")))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mesh = mesh::load_obj(&base.join(&manifest.mesh))?;
    let attenuation = AttenuationMap::from_image(&image::read_pfm(&base.join(&manifest.attenuation))?);
    attenuation.validate()?;

    let affine = match &manifest.color_affine {
        Some(rel) => Some(crate::pipeline::ColorAffine::load(&base.join(rel))?),
        None => None,
    };

    let mut views = Vec::with_capacity(manifest.views.len());
    for record in &manifest.views {
        if record.camera_to_world.len() != 16 {
            return Err(Error::parse(manifest_path, "camera_to_world must have 16 entries"));
        }
        let mut m = [0.0; 16];
        m.copy_from_slice(&record.camera_to_world);
        let camera = Camera::from_camera_to_world(
            &m,
            record.fx,
            record.fy,
            record.cx,
            record.cy,
            record.width,
            record.height,
        );
        let mut img = image::read_pfm(&base.join(&record.image))?;
        if let Some(affine) = &affine {
            img = crate::pipeline::apply_color_correction(&img, affine)?;
        }
        let view = CaptureView {
            image: img,
            camera,
            polarization: Polarization::parse(&record.polarization)?,
            role: ViewRole::parse(&record.role)?,
            light_intensity: manifest.light_intensity,
        };
        view.validate()?;
        if view.image.width != attenuation.width || view.image.height != attenuation.height {
            return Err(Error::data(format!(
                "view image {}x{} does not match attenuation map {}x{}",
                view.image.width, view.image.height, attenuation.width, attenuation.height
            )));
        }
        views.push(view);
    }

    Ok(Dataset {
        mesh,
        views,
        attenuation,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TextureParams {
    alpha: f64,
    diffuse_scale: [f64; 3],
}

/// Write a texture set under `dir` as kd/ks/ka/normal PFMs, a params.json
/// sidecar for the scalars, and PNG previews.
pub fn save_textures(dir: &Path, textures: &TextureSet) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, tex) in [
        ("kd", &textures.kd),
        ("ks", &textures.ks),
        ("ka", &textures.ka),
        ("normal", &textures.normal),
    ] {
        let img = tex.to_image();
        image::write_pfm(&dir.join(format!("{name}.pfm")), &img)?;
        image::write_png(&dir.join(format!("{name}.png")), &preview_of(name, &img))?;
    }
    let params = TextureParams {
        alpha: textures.alpha,
        diffuse_scale: textures.diffuse_scale,
    };
    let path = dir.join("params.json");
    let json = serde_json::to_string_pretty(&params)
        .map_err(|e| Error::data(format!("params serialization: {e}")))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Normal maps store signed vectors; remap to [0,1] for the preview so
/// flat shows as the familiar light blue.
fn preview_of(name: &str, img: &crate::image::Image) -> crate::image::Image {
    if name != "normal" {
        return img.clone();
    }
    let mut out = img.clone();
    for v in out.data.iter_mut() {
        *v = 0.5 * (*v + 1.0);
    }
    out
}

pub fn load_textures(dir: &Path) -> Result<TextureSet> {
    let load = |name: &str| -> Result<Texture> {
        Texture::from_image(&image::read_pfm(&dir.join(format!("{name}.pfm")))?)
    };
    let kd = load("kd")?;
    let ks = load("ks")?;
    let ka = load("ka")?;
    let normal = load("normal")?;
    let params_path = dir.join("params.json");
    let text = std::fs::read_to_string(&params_path).map_err(|e| Error::io(&params_path, e))?;
    let params: TextureParams = serde_json::from_str(&text)
        .map_err(|e| Error::parse(&params_path, format!("bad params: {e}")))?;
    let ts = TextureSet {
        kd,
        ks,
        ka,
        normal,
        alpha: params.alpha,
        diffuse_scale: params.diffuse_scale,
    };
    ts.validate()?;
    Ok(ts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_scene, render_dataset, SynthConfig};

    fn temp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("polarfit_scene_test").join(name);
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn dataset_round_trips_through_manifest() {
        let config = SynthConfig {
            n_views: 2,
            image_size: 64,
            texture_resolution: 32,
            sphere_subdivisions: 12,
            noise_sigma: 0.001,
            ..SynthConfig::default()
        };
        let scene = make_scene(&config);
        let dataset = render_dataset(&scene).unwrap();
        let dir = temp_dir("roundtrip");
        let manifest = save_dataset(&dir, &dataset, config.light_intensity).unwrap();
        let back = load_dataset(&manifest).unwrap();

        assert_eq!(back.views.len(), dataset.views.len());
        assert_eq!(back.mesh.triangle_count(), dataset.mesh.triangle_count());
        assert_eq!(back.mesh.vertex_count(), dataset.mesh.vertex_count());
        for (a, b) in dataset.views.iter().zip(back.views.iter()) {
            assert_eq!(a.image.data, b.image.data, "image changed in round trip");
            assert_eq!(a.polarization, b.polarization);
            assert_eq!(a.role, b.role);
            assert!((a.camera.center() - b.camera.center()).length() < 1e-9);
        }
        for (a, b) in dataset
            .attenuation
            .data
            .iter()
            .zip(back.attenuation.data.iter())
        {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn sphere_mesh_obj_round_trip_topology() {
        let mesh = crate::synth::make_sphere(8);
        let dir = temp_dir("objrt");
        let path = dir.join("sphere.obj");
        crate::mesh::save_obj(&path, &mesh).unwrap();
        let back = crate::mesh::load_obj(&path).unwrap();
        assert_eq!(back.vertex_count(), mesh.vertex_count());
        assert_eq!(back.triangle_count(), mesh.triangle_count());
        assert_eq!(back.triangles, mesh.triangles);
        for (a, b) in mesh.positions.iter().zip(back.positions.iter()) {
            assert!((*a - *b).length() < 1e-12);
        }
        for (a, b) in mesh.corner_uvs.iter().zip(back.corner_uvs.iter()) {
            for k in 0..3 {
                assert_eq!(a[k], b[k]);
            }
        }
    }

    #[test]
    fn textures_round_trip() {
        let ts = crate::synth::make_gt_textures(16, 3, [0.9, 1.0, 1.1]);
        let dir = temp_dir("textures");
        save_textures(&dir, &ts).unwrap();
        let back = load_textures(&dir).unwrap();
        assert_eq!(back.alpha, ts.alpha);
        assert_eq!(back.diffuse_scale, ts.diffuse_scale);
        for (a, b) in ts.kd.data.iter().zip(back.kd.data.iter()) {
            assert!((a - b).abs() < 1e-6); // f32 storage
        }
        for (a, b) in ts.normal.data.iter().zip(back.normal.data.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let err = load_dataset(Path::new("/nonexistent/manifest.json")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
