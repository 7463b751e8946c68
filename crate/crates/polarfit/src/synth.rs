//! Synthetic ground-truth scenes: the test oracle for every recovery
//! claim. Generates meshes, procedural texture sets, camera orbits,
//! attenuation maps, and rendered cross/parallel datasets with optional
//! sensor noise, all seed-deterministic.

use crate::brdf::Mode;
use crate::camera::{Camera, CaptureView, Polarization, ViewRole};
use crate::error::Result;
use crate::math::{vec3, Vec3};
use crate::mesh::{compute_tangent_frames, TriMesh};
use crate::raster::{self, AttenuationMap};
use crate::rng::Pcg32;
use crate::texture::{Texture, TextureSet};

/// UV sphere: `subdivisions` latitude bands (minimum 2) and twice as many
/// longitude slices, welded topology with per-corner UVs (the seam and the
/// poles need no duplicate vertices), equirectangular parameterization,
/// analytic normals, unit-scaled. Pole vertices have no consistent UV
/// derivative, so their tangent frames come from the orthogonal fallback.
pub fn make_sphere(subdivisions: usize) -> TriMesh {
    let stacks = subdivisions.max(2);
    let slices = 2 * stacks;

    let mut positions = Vec::new();
    positions.push(vec3(0.0, 1.0, 0.0)); // north pole
    for j in 1..stacks {
        let theta = std::f64::consts::PI * j as f64 / stacks as f64;
        for i in 0..slices {
            let phi = 2.0 * std::f64::consts::PI * i as f64 / slices as f64;
            positions.push(vec3(
                theta.sin() * phi.sin(),
                theta.cos(),
                theta.sin() * phi.cos(),
            ));
        }
    }
    positions.push(vec3(0.0, -1.0, 0.0)); // south pole
    let south = positions.len() as u32 - 1;

    let ring = |j: usize, i: usize| -> u32 { 1 + ((j - 1) * slices + i % slices) as u32 };
    let uv = |j: usize, i: usize| -> [f64; 2] {
        [i as f64 / slices as f64, 1.0 - j as f64 / stacks as f64]
    };

    let mut triangles = Vec::new();
    let mut corner_uvs = Vec::new();
    for i in 0..slices {
        // north fan
        let pole_uv = [(i as f64 + 0.5) / slices as f64, 1.0];
        triangles.push([0, ring(1, i), ring(1, i + 1)]);
        corner_uvs.push([pole_uv, uv(1, i), uv(1, i + 1)]);
        // south fan
        let pole_uv = [(i as f64 + 0.5) / slices as f64, 0.0];
        triangles.push([south, ring(stacks - 1, i + 1), ring(stacks - 1, i)]);
        corner_uvs.push([pole_uv, uv(stacks - 1, i + 1), uv(stacks - 1, i)]);
    }
    for j in 1..stacks - 1 {
        for i in 0..slices {
            let (a, b, c, d) = (ring(j, i), ring(j, i + 1), ring(j + 1, i), ring(j + 1, i + 1));
            triangles.push([a, c, d]);
            corner_uvs.push([uv(j, i), uv(j + 1, i), uv(j + 1, i + 1)]);
            triangles.push([a, d, b]);
            corner_uvs.push([uv(j, i), uv(j + 1, i + 1), uv(j, i + 1)]);
        }
    }

    let normals = positions.iter().map(|p| p.normalized()).collect();
    let mut mesh = TriMesh {
        positions,
        triangles,
        corner_uvs,
        normals,
        tangents: Vec::new(),
        bitangents: Vec::new(),
    };
    mesh.normalize_unit_scale();
    compute_tangent_frames(&mut mesh);
    mesh
}

/// Sphere displaced along its normals by low-frequency noise; adds
/// curvature variety for normal-map tests. Normals are recomputed from the
/// displaced faces.
pub fn make_blob(subdivisions: usize, seed: u64, amplitude: f64) -> TriMesh {
    let mut mesh = make_sphere(subdivisions);
    let noise = value_noise(64, seed, 6, 2);
    for (p, n) in mesh.positions.iter_mut().zip(mesh.normals.iter()) {
        let dir = p.normalized();
        let theta = dir.y.clamp(-1.0, 1.0).acos();
        let phi = dir.x.atan2(dir.z).rem_euclid(2.0 * std::f64::consts::PI);
        let u = phi / (2.0 * std::f64::consts::PI);
        let v = 1.0 - theta / std::f64::consts::PI;
        let h = noise.sample(u, v)[0] * 2.0 - 1.0;
        *p += *n * (amplitude * h);
    }
    // displaced surface: rebuild shading frames from the new geometry
    mesh.normals = crate::mesh::vertex_normals_from_faces(&mesh.positions, &mesh.triangles);
    mesh.normalize_unit_scale();
    compute_tangent_frames(&mut mesh);
    mesh
}

/// Flat plane in the x-y plane facing -z, UVs spanning [0,1]^2, subdivided
/// into `grid` x `grid` quads. Used by the light-attenuation calibration.
pub fn make_plane(grid: usize) -> TriMesh {
    let n = grid.max(1);
    let mut positions = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            positions.push(vec3(
                i as f64 / n as f64 - 0.5,
                j as f64 / n as f64 - 0.5,
                0.0,
            ));
        }
    }
    let idx = |i: usize, j: usize| (j * (n + 1) + i) as u32;
    let uv = |i: usize, j: usize| [i as f64 / n as f64, j as f64 / n as f64];
    let mut triangles = Vec::new();
    let mut corner_uvs = Vec::new();
    for j in 0..n {
        for i in 0..n {
            // facing -z for a camera looking along +z
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i + 1, j)]);
            corner_uvs.push([uv(i, j), uv(i + 1, j + 1), uv(i + 1, j)]);
            triangles.push([idx(i, j), idx(i, j + 1), idx(i + 1, j + 1)]);
            corner_uvs.push([uv(i, j), uv(i, j + 1), uv(i + 1, j + 1)]);
        }
    }
    let normals = vec![vec3(0.0, 0.0, -1.0); positions.len()];
    let mut mesh = TriMesh {
        positions,
        triangles,
        corner_uvs,
        normals,
        tangents: Vec::new(),
        bitangents: Vec::new(),
    };
    compute_tangent_frames(&mut mesh);
    mesh
}

/// Smooth value noise in [0,1]: seeded lattice values, bilinear
/// interpolation, `octaves` halving in amplitude and doubling in frequency.
pub fn value_noise(resolution: usize, seed: u64, cells: usize, octaves: usize) -> Texture {
    let mut out = Texture::new(resolution, 1);
    let mut amplitude = 1.0;
    let mut freq_cells = cells.max(1);
    let mut total_amp = 0.0;
    for octave in 0..octaves.max(1) {
        let mut rng = Pcg32::new(seed, 100 + octave as u64);
        let n = freq_cells + 1;
        let lattice: Vec<f64> = (0..n * n).map(|_| rng.next_f64()).collect();
        for j in 0..resolution {
            for i in 0..resolution {
                let u = (i as f64 + 0.5) / resolution as f64 * freq_cells as f64;
                let v = (j as f64 + 0.5) / resolution as f64 * freq_cells as f64;
                let (i0, j0) = (u.floor() as usize, v.floor() as usize);
                let (fu, fv) = (u - i0 as f64, v - j0 as f64);
                let (i0, j0) = (i0.min(freq_cells - 1), j0.min(freq_cells - 1));
                let s = |x: usize, y: usize| lattice[y * n + x];
                let val = s(i0, j0) * (1.0 - fu) * (1.0 - fv)
                    + s(i0 + 1, j0) * fu * (1.0 - fv)
                    + s(i0, j0 + 1) * (1.0 - fu) * fv
                    + s(i0 + 1, j0 + 1) * fu * fv;
                let base = out.texel_index(i, j);
                out.data[base] += amplitude * val;
            }
        }
        total_amp += amplitude;
        amplitude *= 0.5;
        freq_cells *= 2;
    }
    for v in out.data.iter_mut() {
        *v /= total_amp;
    }
    out
}

/// Procedural ground-truth texture set: smooth albedo in [0.1, 0.9],
/// sparse specular blobs in [0, 0.5], a small-amplitude bump field
/// (|xy| <= 0.3 before normalization), zero ambient, seeded alpha in
/// [0.2, 0.8].
pub fn make_gt_textures(resolution: usize, seed: u64, diffuse_scale: [f64; 3]) -> TextureSet {
    let mut ts = TextureSet::flat(resolution);

    for c in 0..3 {
        let noise = value_noise(resolution, seed.wrapping_add(c as u64), 5, 2);
        for (t, n) in ts.kd.data.chunks_exact_mut(3).zip(noise.data.iter()) {
            t[c] = 0.1 + 0.8 * n;
        }
    }

    // sparse gaussian blobs for the specular gain
    let mut rng = Pcg32::new(seed, 40);
    ts.ks.data.fill(0.0);
    let n_blobs = 8;
    for _ in 0..n_blobs {
        let cx = rng.next_f64() * resolution as f64;
        let cy = rng.next_f64() * resolution as f64;
        let sigma = rng.range_f64(0.04, 0.10) * resolution as f64;
        let amp = rng.range_f64(0.2, 0.5);
        for j in 0..resolution {
            for i in 0..resolution {
                let dx = i as f64 + 0.5 - cx;
                let dy = j as f64 + 0.5 - cy;
                let g = amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                let idx = ts.ks.texel_index(i, j);
                ts.ks.data[idx] = (ts.ks.data[idx] + g).min(0.5);
            }
        }
    }

    let bump_x = value_noise(resolution, seed.wrapping_add(7), 8, 2);
    let bump_y = value_noise(resolution, seed.wrapping_add(8), 8, 2);
    for ((t, bx), by) in ts
        .normal
        .data
        .chunks_exact_mut(3)
        .zip(bump_x.data.iter())
        .zip(bump_y.data.iter())
    {
        let nx = (bx * 2.0 - 1.0) * 0.3;
        let ny = (by * 2.0 - 1.0) * 0.3;
        let len = (nx * nx + ny * ny + 1.0).sqrt();
        t[0] = nx / len;
        t[1] = ny / len;
        t[2] = 1.0 / len;
    }

    ts.ka = Texture::constant(resolution, 3, &[0.0; 3]);
    ts.alpha = Pcg32::new(seed, 41).range_f64(0.2, 0.8);
    ts.diffuse_scale = diffuse_scale;
    ts
}

#[derive(Debug, Clone)]
pub struct OrbitConfig {
    pub n_views: usize,
    pub radius: f64,
    /// Half-angle of the spherical cap around +z the cameras sit on.
    pub cap_half_angle_deg: f64,
    /// Relative jitter applied to direction and radius; 0 disables.
    pub jitter: f64,
    pub jitter_seed: u64,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    /// Look-at target offset amplitude (world units): nonzero values frame
    /// the object off-center, like a handheld capture.
    pub look_jitter: f64,
}

impl Default for OrbitConfig {
    fn default() -> OrbitConfig {
        OrbitConfig {
            n_views: 48,
            radius: 2.0,
            cap_half_angle_deg: 55.0,
            jitter: 0.5,
            jitter_seed: 0,
            width: 512,
            height: 512,
            fov_deg: 24.0,
            look_jitter: 0.0,
        }
    }
}

/// Cameras on a jittered spherical cap, all looking at the origin with the
/// light co-located at each camera center. A Fibonacci spiral with an
/// area-uniform polar law spreads the base directions so the normal-view
/// angle distribution stays broad; a 180-degree cap covers the whole
/// sphere. The first camera sits exactly on the +z axis.
pub fn make_orbit(config: &OrbitConfig) -> Vec<Camera> {
    let n = config.n_views.max(1);
    let fx = (config.width as f64 / 2.0) / (config.fov_deg.to_radians() / 2.0).tan();
    let cap = config.cap_half_angle_deg.to_radians();
    let mut rng = Pcg32::new(config.jitter_seed, 50);
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());

    (0..n)
        .map(|k| {
            let spread = if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
            let base_theta = (1.0 - (1.0 - cap.cos()) * spread).clamp(-1.0, 1.0).acos();
            let base_phi = golden * k as f64;
            let (theta, phi, radius) = if config.jitter > 0.0 {
                (
                    (base_theta + rng.range_f64(-0.06, 0.06) * config.jitter * cap).clamp(0.0, cap),
                    base_phi + rng.range_f64(-0.5, 0.5) * config.jitter,
                    config.radius * (1.0 + rng.range_f64(-0.3, 0.3) * config.jitter),
                )
            } else {
                (base_theta, base_phi, config.radius)
            };
            let eye = vec3(
                radius * theta.sin() * phi.cos(),
                radius * theta.sin() * phi.sin(),
                radius * theta.cos(),
            );
            let target = if config.look_jitter > 0.0 {
                vec3(
                    rng.range_f64(-1.0, 1.0) * config.look_jitter,
                    rng.range_f64(-1.0, 1.0) * config.look_jitter,
                    rng.range_f64(-1.0, 1.0) * config.look_jitter,
                )
            } else {
                Vec3::ZERO
            };
            Camera::look_at(
                eye,
                target,
                vec3(0.0, 1.0, 0.0),
                fx,
                fx,
                config.width,
                config.height,
            )
        })
        .collect()
}

/// Radial cos^4 falloff of the pixel angle against the optical axis,
/// evaluated from shared intrinsics. The usual vignette stand-in.
pub fn cos4_vignette(width: usize, height: usize, fx: f64, fy: f64, cx: f64, cy: f64) -> AttenuationMap {
    let mut map = AttenuationMap::uniform(width, height);
    for y in 0..height {
        for x in 0..width {
            let dx = (x as f64 + 0.5 - cx) / fx;
            let dy = (y as f64 + 0.5 - cy) / fy;
            let cos_theta = 1.0 / (1.0 + dx * dx + dy * dy).sqrt();
            map.data[y * width + x] = cos_theta.powi(4);
        }
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthGeometry {
    Sphere,
    Blob,
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_views: usize,
    pub image_size: usize,
    pub texture_resolution: usize,
    pub sphere_subdivisions: usize,
    pub geometry: SynthGeometry,
    pub orbit_radius: f64,
    pub fov_deg: f64,
    pub cap_half_angle_deg: f64,
    pub noise_sigma: f64,
    pub light_intensity: f64,
    pub diffuse_scale: [f64; 3],
    /// Ground-truth attenuation: uniform 1 or a cos^4 vignette.
    pub vignette: bool,
    /// Look-at target jitter (world units) for off-center framing.
    pub look_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            seed: 0,
            n_views: 48,
            image_size: 512,
            texture_resolution: 256,
            sphere_subdivisions: 48,
            geometry: SynthGeometry::Sphere,
            orbit_radius: 2.0,
            fov_deg: 24.0,
            cap_half_angle_deg: 55.0,
            noise_sigma: 0.002,
            light_intensity: 10.0,
            diffuse_scale: [1.0, 1.0, 1.0],
            vignette: false,
            look_jitter: 0.0,
        }
    }
}

/// Ground truth plus everything needed to render it.
pub struct SynthScene {
    pub mesh: TriMesh,
    pub gt: TextureSet,
    pub cameras: Vec<Camera>,
    pub attenuation: AttenuationMap,
    pub config: SynthConfig,
}

pub fn make_scene(config: &SynthConfig) -> SynthScene {
    let mesh = match config.geometry {
        SynthGeometry::Sphere => make_sphere(config.sphere_subdivisions),
        SynthGeometry::Blob => make_blob(config.sphere_subdivisions, config.seed, 0.12),
    };
    let gt = make_gt_textures(config.texture_resolution, config.seed, config.diffuse_scale);
    let cameras = make_orbit(&OrbitConfig {
        n_views: config.n_views,
        radius: config.orbit_radius,
        cap_half_angle_deg: config.cap_half_angle_deg,
        jitter: 0.5,
        jitter_seed: config.seed,
        width: config.image_size,
        height: config.image_size,
        fov_deg: config.fov_deg,
        look_jitter: config.look_jitter,
    });
    let attenuation = if config.vignette {
        let c = &cameras[0];
        cos4_vignette(c.width, c.height, c.fx, c.fy, c.cx, c.cy)
    } else {
        AttenuationMap::uniform(config.image_size, config.image_size)
    };
    SynthScene {
        mesh,
        gt,
        cameras,
        attenuation,
        config: config.clone(),
    }
}

/// Everything the fitting pipeline consumes.
#[derive(Debug)]
pub struct Dataset {
    pub mesh: TriMesh,
    pub views: Vec<CaptureView>,
    pub attenuation: AttenuationMap,
}

impl Dataset {
    pub fn views_of(&self, polarization: Polarization, role: ViewRole) -> Vec<&CaptureView> {
        self.views
            .iter()
            .filter(|v| v.polarization == polarization && v.role == role)
            .collect()
    }
}

/// Render every camera in both polarization modes with the ground-truth
/// textures and attenuation map, add seeded Gaussian noise, clamp at zero.
/// The highest camera index becomes the holdout view for each mode.
pub fn render_dataset(scene: &SynthScene) -> Result<Dataset> {
    let config = &scene.config;
    let mut views = Vec::with_capacity(scene.cameras.len() * 2);
    for (cam_idx, camera) in scene.cameras.iter().enumerate() {
        let gbuffer = raster::rasterize(&scene.mesh, camera)?;
        for (mode_idx, polarization) in [Polarization::Cross, Polarization::Parallel]
            .into_iter()
            .enumerate()
        {
            let mut image = raster::shade(
                &gbuffer,
                &scene.gt,
                [config.light_intensity; 3],
                &scene.attenuation,
                Mode::from(polarization),
            )?;
            if config.noise_sigma > 0.0 {
                let stream = 1000 + (cam_idx * 2 + mode_idx) as u64;
                let mut rng = Pcg32::new(config.seed, stream);
                for v in image.data.iter_mut() {
                    *v = (*v + (config.noise_sigma * rng.next_gaussian()) as f32).max(0.0);
                }
            }
            let role = if cam_idx + 1 == scene.cameras.len() {
                ViewRole::Holdout
            } else {
                ViewRole::Train
            };
            views.push(CaptureView {
                image,
                camera: camera.clone(),
                polarization,
                role,
                light_intensity: config.light_intensity,
            });
        }
    }
    Ok(Dataset {
        mesh: scene.mesh.clone(),
        views,
        attenuation: scene.attenuation.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn sphere_is_closed_with_euler_characteristic_two() {
        for n in [2usize, 4, 8] {
            let mesh = make_sphere(n);
            let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
            for tri in &mesh.triangles {
                for k in 0..3 {
                    let (a, b) = (tri[k], tri[(k + 1) % 3]);
                    let key = (a.min(b), a.max(b));
                    *edges.entry(key).or_insert(0) += 1;
                }
            }
            // every edge shared by exactly two faces -> closed 2-manifold
            assert!(edges.values().all(|&c| c == 2), "open edges at n={n}");
            let v = mesh.vertex_count() as i64;
            let e = edges.len() as i64;
            let f = mesh.triangle_count() as i64;
            assert_eq!(v - e + f, 2, "chi at n={n}");
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        let mesh = make_sphere(16);
        for (p, n) in mesh.positions.iter().zip(mesh.normals.iter()) {
            assert!((p.normalized() - *n).length() < 1e-6);
        }
    }

    #[test]
    fn sphere_area_close_to_analytic() {
        let mesh = make_sphere(32);
        // unit-scaled sphere: bbox diagonal 1 means radius 1/(2*sqrt(3))
        let r = 1.0 / (2.0 * 3.0f64.sqrt());
        let analytic = 4.0 * std::f64::consts::PI * r * r;
        let area = mesh.surface_area();
        assert!(
            (area - analytic).abs() / analytic < 0.05,
            "{area} vs {analytic}"
        );
    }

    #[test]
    fn sphere_tangent_frames_orthonormal() {
        let mesh = make_sphere(24);
        for i in 0..mesh.vertex_count() {
            let (t, b, n) = (mesh.tangents[i], mesh.bitangents[i], mesh.normals[i]);
            assert!((t.length() - 1.0).abs() < 1e-6);
            assert!((b.length() - 1.0).abs() < 1e-6);
            assert!(t.dot(n).abs() < 1e-6);
            assert!(b.dot(n).abs() < 1e-6);
        }
    }

    #[test]
    fn blob_stays_valid() {
        let mesh = make_blob(16, 3, 0.12);
        assert!(mesh.validate().is_ok());
        let (lo, hi) = mesh.bbox();
        assert!(((hi - lo).length() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gt_textures_deterministic_and_seed_sensitive() {
        let a = make_gt_textures(32, 9, [1.0; 3]);
        let b = make_gt_textures(32, 9, [1.0; 3]);
        assert_eq!(a, b);
        assert!(a.validate().is_ok());
        let c = make_gt_textures(32, 10, [1.0; 3]);
        let max_diff = a
            .kd
            .data
            .iter()
            .zip(c.kd.data.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_diff > 0.05, "seeds too similar: {max_diff}");
    }

    #[test]
    fn gt_texture_ranges() {
        let ts = make_gt_textures(64, 5, [0.9, 1.0, 1.1]);
        assert!(ts.kd.data.iter().all(|&v| (0.1..=0.9).contains(&v)));
        assert!(ts.ks.data.iter().all(|&v| (0.0..=0.5).contains(&v)));
        assert!(ts.ks.data.iter().any(|&v| v > 0.1), "no specular blobs");
        assert!(ts.ka.data.iter().all(|&v| v == 0.0));
        assert!((0.2..=0.8).contains(&ts.alpha));
        for texel in ts.normal.data.chunks_exact(3) {
            let len = (texel[0] * texel[0] + texel[1] * texel[1] + texel[2] * texel[2]).sqrt();
            assert!((len - 1.0).abs() < 1e-9);
            assert!(texel[2] > 0.9); // small-amplitude bumps stay near flat
        }
    }

    #[test]
    fn single_view_orbit_sits_on_axis() {
        let cams = make_orbit(&OrbitConfig {
            n_views: 1,
            jitter: 0.0,
            radius: 2.0,
            ..OrbitConfig::default()
        });
        assert_eq!(cams.len(), 1);
        assert!((cams[0].center() - vec3(0.0, 0.0, 2.0)).length() < 1e-12);
    }

    #[test]
    fn orbit_cameras_look_at_origin() {
        let cams = make_orbit(&OrbitConfig {
            n_views: 12,
            ..OrbitConfig::default()
        });
        for cam in &cams {
            let (u, v, _) = cam.project(Vec3::ZERO).unwrap();
            assert!((u - cam.cx).abs() < 1e-6);
            assert!((v - cam.cy).abs() < 1e-6);
        }
    }

    #[test]
    fn orbit_directions_distinct() {
        let cams = make_orbit(&OrbitConfig {
            n_views: 48,
            ..OrbitConfig::default()
        });
        let dirs: Vec<Vec3> = cams.iter().map(|c| c.center().normalized()).collect();
        let mut min_sep = f64::INFINITY;
        for i in 0..dirs.len() {
            for j in i + 1..dirs.len() {
                min_sep = min_sep.min(dirs[i].dot(dirs[j]).clamp(-1.0, 1.0).acos());
            }
        }
        assert!(min_sep > 0.0, "duplicate view directions");
    }

    #[test]
    fn dataset_noise_free_renders_reproduce() {
        let config = SynthConfig {
            n_views: 3,
            image_size: 96,
            texture_resolution: 32,
            sphere_subdivisions: 16,
            noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        let scene = make_scene(&config);
        let dataset = render_dataset(&scene).unwrap();
        assert_eq!(dataset.views.len(), 6);
        for view in &dataset.views {
            let gb = raster::rasterize(&dataset.mesh, &view.camera).unwrap();
            let again = raster::shade(
                &gb,
                &scene.gt,
                [config.light_intensity; 3],
                &dataset.attenuation,
                Mode::from(view.polarization),
            )
            .unwrap();
            assert_eq!(again.data, view.image.data, "re-render differs");
        }
    }

    #[test]
    fn parallel_minus_cross_non_negative_without_noise() {
        let config = SynthConfig {
            n_views: 2,
            image_size: 96,
            texture_resolution: 32,
            sphere_subdivisions: 16,
            noise_sigma: 0.0,
            diffuse_scale: [1.0; 3],
            ..SynthConfig::default()
        };
        let scene = make_scene(&config);
        let dataset = render_dataset(&scene).unwrap();
        let cross: Vec<_> = dataset
            .views
            .iter()
            .filter(|v| v.polarization == Polarization::Cross)
            .collect();
        let parallel: Vec<_> = dataset
            .views
            .iter()
            .filter(|v| v.polarization == Polarization::Parallel)
            .collect();
        let mut some_positive = false;
        for (c, p) in cross.iter().zip(parallel.iter()) {
            for (a, b) in c.image.data.iter().zip(p.image.data.iter()) {
                assert!(*b >= *a - 1e-6, "parallel darker than cross: {b} < {a}");
                if *b > *a + 1e-4 {
                    some_positive = true;
                }
            }
        }
        assert!(some_positive, "specular blobs never visible");
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let config = SynthConfig {
            n_views: 1,
            image_size: 64,
            texture_resolution: 32,
            sphere_subdivisions: 12,
            noise_sigma: 0.01,
            ..SynthConfig::default()
        };
        let a = render_dataset(&make_scene(&config)).unwrap();
        let b = render_dataset(&make_scene(&config)).unwrap();
        for (va, vb) in a.views.iter().zip(b.views.iter()) {
            assert_eq!(va.image.data, vb.image.data);
        }
    }

    #[test]
    fn train_holdout_split_marks_last_camera() {
        let config = SynthConfig {
            n_views: 4,
            image_size: 64,
            texture_resolution: 32,
            sphere_subdivisions: 12,
            ..SynthConfig::default()
        };
        let dataset = render_dataset(&make_scene(&config)).unwrap();
        let holdout = dataset.views_of(Polarization::Cross, ViewRole::Holdout);
        assert_eq!(holdout.len(), 1);
        assert_eq!(dataset.views_of(Polarization::Cross, ViewRole::Train).len(), 3);
        assert_eq!(dataset.views_of(Polarization::Parallel, ViewRole::Holdout).len(), 1);
    }

    #[test]
    fn weight_positive_texel_coverage_of_facing_hemisphere() {
        // >= 95% of texels on the hemisphere facing the orbit must receive
        // at least one observation below mip level 1
        let config = SynthConfig {
            n_views: 24,
            image_size: 256,
            texture_resolution: 64,
            sphere_subdivisions: 24,
            noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        let scene = make_scene(&config);
        let res = config.texture_resolution;
        let mut observed = Texture::new(res, 1);
        for cam in &scene.cameras {
            let gb = raster::rasterize(&scene.mesh, cam).unwrap();
            for px in gb.pixels.iter().filter(|p| p.covered()) {
                if raster::mip_level(px, res) < 1.0 && px.cosv_geo > 0.0 {
                    observed.splat(px.uv[0], px.uv[1], &[1.0]);
                }
            }
        }
        // facing hemisphere: sphere points with +z component, i.e. texels
        // with phi in (-pi/2, pi/2); skip the pole rows whose texels map to
        // vanishing surface area
        let mut total = 0usize;
        let mut hit = 0usize;
        for j in 2..res - 2 {
            for i in 0..res {
                let u = (i as f64 + 0.5) / res as f64;
                let phi = 2.0 * std::f64::consts::PI * u;
                if phi.cos() <= 0.05 {
                    continue;
                }
                total += 1;
                if observed.data[observed.texel_index(i, j)] > 1e-6 {
                    hit += 1;
                }
            }
        }
        let frac = hit as f64 / total as f64;
        assert!(frac >= 0.95, "coverage {frac}");
    }
}
