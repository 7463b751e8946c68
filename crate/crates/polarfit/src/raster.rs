//! Deterministic software rasterizer and forward shading.
//!
//! Rasterization produces a per-pixel geometry buffer: perspective
//! projection, z-buffered nearest-surface selection, perspective-correct
//! barycentric interpolation, analytic per-triangle affine screen-to-uv
//! derivatives, pixel centers at (x+0.5, y+0.5), back faces culled.
//!
//! Work is partitioned into fixed 16-row bands processed independently
//! (triangles in ascending id within each band, strict-less depth test),
//! so results are identical regardless of worker count.

use rayon::prelude::*;

use crate::brdf::{self, Mode, ShadingInputs};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::Vec3;
use crate::mesh::TriMesh;
use crate::texture::{Texture, TextureSet};

const BAND_ROWS: usize = 16;
const Z_NEAR: f64 = 1e-4;

pub const NO_TRIANGLE: u32 = u32::MAX;

/// Per-pixel rasterization output.
#[derive(Debug, Clone, Copy)]
pub struct GPixel {
    pub tri_id: u32,
    pub uv: [f64; 2],
    /// Interpolated geometric normal (unit).
    pub normal: Vec3,
    pub tangent: Vec3,
    pub bitangent: Vec3,
    /// Unit direction from the surface point toward the camera (= light).
    pub view_dir: Vec3,
    /// Geometric n.w, clamped to [0,1].
    pub cosv_geo: f64,
    /// Euclidean camera-to-point distance.
    pub dist: f64,
    /// Screen-space uv derivatives of the owning triangle.
    pub duv_dx: [f64; 2],
    pub duv_dy: [f64; 2],
}

impl Default for GPixel {
    fn default() -> GPixel {
        GPixel {
            tri_id: NO_TRIANGLE,
            uv: [0.0; 2],
            normal: Vec3::ZERO,
            tangent: Vec3::ZERO,
            bitangent: Vec3::ZERO,
            view_dir: Vec3::ZERO,
            cosv_geo: 0.0,
            dist: 0.0,
            duv_dx: [0.0; 2],
            duv_dy: [0.0; 2],
        }
    }
}

impl GPixel {
    #[inline]
    pub fn covered(&self) -> bool {
        self.tri_id != NO_TRIANGLE
    }
}

#[derive(Debug, Clone)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<GPixel>,
}

impl GBuffer {
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &GPixel {
        &self.pixels[y * self.width + x]
    }

    pub fn coverage_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.covered()).count()
    }
}

/// Per-camera-pixel light attenuation multiplier, 1 or 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl AttenuationMap {
    pub fn uniform(width: usize, height: usize) -> AttenuationMap {
        AttenuationMap {
            width,
            height,
            channels: 1,
            data: vec![1.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> [f64; 3] {
        let base = (y * self.width + x) * self.channels;
        if self.channels == 1 {
            [self.data[base]; 3]
        } else {
            [self.data[base], self.data[base + 1], self.data[base + 2]]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::data("attenuation map must have 1 or 3 channels"));
        }
        if self.data.len() != self.width * self.height * self.channels {
            return Err(Error::data("attenuation map size mismatch"));
        }
        if self.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::data("attenuation map values must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn to_image(&self) -> Image {
        let mut img = Image::new(self.width, self.height, self.channels);
        for (o, v) in img.data.iter_mut().zip(self.data.iter()) {
            *o = *v as f32;
        }
        img
    }

    pub fn from_image(img: &Image) -> AttenuationMap {
        AttenuationMap {
            width: img.width,
            height: img.height,
            channels: img.channels,
            data: img.data.iter().map(|&v| v as f64).collect(),
        }
    }
}

struct TriSetup {
    id: u32,
    screen: [[f64; 2]; 3],
    inv_z: [f64; 3],
    area2: f64,
    x_range: (usize, usize),
    y_range: (usize, usize),
    duv_dx: [f64; 2],
    duv_dy: [f64; 2],
}

pub fn rasterize(mesh: &TriMesh, camera: &Camera) -> Result<GBuffer> {
    camera.validate()?;
    let (w, h) = (camera.width, camera.height);
    let cam_center = camera.center();

    // Project every vertex once.
    let projected: Vec<Option<([f64; 2], f64)>> = mesh
        .positions
        .iter()
        .map(|&p| {
            let pc = camera.world_to_camera(p);
            if pc.z < Z_NEAR {
                None
            } else {
                Some((
                    [
                        camera.fx * pc.x / pc.z + camera.cx,
                        camera.fy * pc.y / pc.z + camera.cy,
                    ],
                    1.0 / pc.z,
                ))
            }
        })
        .collect();

    // Screen-space setup per front-facing triangle.
    let mut tris: Vec<TriSetup> = Vec::new();
    for (id, (tri, uvs)) in mesh.triangles.iter().zip(mesh.corner_uvs.iter()).enumerate() {
        let (Some(a), Some(b), Some(c)) = (
            projected[tri[0] as usize],
            projected[tri[1] as usize],
            projected[tri[2] as usize],
        ) else {
            continue;
        };
        let screen = [a.0, b.0, c.0];
        // With y down in screen space, outward (CCW) triangles facing the
        // camera wind clockwise: front faces have negative signed area.
        let area2 = (screen[1][0] - screen[0][0]) * (screen[2][1] - screen[0][1])
            - (screen[2][0] - screen[0][0]) * (screen[1][1] - screen[0][1]);
        if area2 >= 0.0 {
            continue;
        }
        let min_x = screen.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let max_x = screen.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = screen.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let max_y = screen.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        if max_x < 0.0 || max_y < 0.0 || min_x >= w as f64 || min_y >= h as f64 {
            continue;
        }
        let x0 = (min_x - 0.5).floor().max(0.0) as usize;
        let x1 = ((max_x - 0.5).ceil() as usize).min(w - 1);
        let y0 = (min_y - 0.5).floor().max(0.0) as usize;
        let y1 = ((max_y - 0.5).ceil() as usize).min(h - 1);
        if x0 > x1 || y0 > y1 {
            continue;
        }

        // Affine screen->uv map of the projected triangle: constant uv
        // derivatives per triangle.
        let inv_area = 1.0 / area2;
        let (du1, dv1) = (uvs[1][0] - uvs[0][0], uvs[1][1] - uvs[0][1]);
        let (du2, dv2) = (uvs[2][0] - uvs[0][0], uvs[2][1] - uvs[0][1]);
        let (dx1, dy1) = (screen[1][0] - screen[0][0], screen[1][1] - screen[0][1]);
        let (dx2, dy2) = (screen[2][0] - screen[0][0], screen[2][1] - screen[0][1]);
        let duv_dx = [(du1 * dy2 - du2 * dy1) * inv_area, (dv1 * dy2 - dv2 * dy1) * inv_area];
        let duv_dy = [(du2 * dx1 - du1 * dx2) * inv_area, (dv2 * dx1 - dv1 * dx2) * inv_area];

        tris.push(TriSetup {
            id: id as u32,
            screen,
            inv_z: [a.1, b.1, c.1],
            area2,
            x_range: (x0, x1),
            y_range: (y0, y1),
            duv_dx,
            duv_dy,
        });
    }

    let mut pixels = vec![GPixel::default(); w * h];
    pixels
        .par_chunks_mut(BAND_ROWS * w)
        .enumerate()
        .for_each(|(band, out)| {
            let band_y0 = band * BAND_ROWS;
            let band_y1 = (band_y0 + out.len() / w).min(h);
            let mut zbuf = vec![f64::INFINITY; out.len()];
            for tri in &tris {
                if tri.y_range.1 < band_y0 || tri.y_range.0 >= band_y1 {
                    continue;
                }
                let mesh_tri = mesh.triangles[tri.id as usize];
                let uvs = &mesh.corner_uvs[tri.id as usize];
                let inv_area = 1.0 / tri.area2;
                let [p0, p1, p2] = tri.screen;
                for y in tri.y_range.0.max(band_y0)..=(tri.y_range.1.min(band_y1 - 1)) {
                    let py = y as f64 + 0.5;
                    for x in tri.x_range.0..=tri.x_range.1 {
                        let px = x as f64 + 0.5;
                        let e0 = (p2[0] - p1[0]) * (py - p1[1]) - (px - p1[0]) * (p2[1] - p1[1]);
                        let e1 = (p0[0] - p2[0]) * (py - p2[1]) - (px - p2[0]) * (p0[1] - p2[1]);
                        let e2 = (p1[0] - p0[0]) * (py - p0[1]) - (px - p0[0]) * (p1[1] - p0[1]);
                        let w0 = e0 * inv_area;
                        let w1 = e1 * inv_area;
                        let w2 = e2 * inv_area;
                        if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                            continue;
                        }
                        let pw0 = w0 * tri.inv_z[0];
                        let pw1 = w1 * tri.inv_z[1];
                        let pw2 = w2 * tri.inv_z[2];
                        let denom = pw0 + pw1 + pw2;
                        let z = 1.0 / denom;
                        let local = (y - band_y0) * w + x;
                        if z >= zbuf[local] {
                            continue;
                        }
                        zbuf[local] = z;

                        let c0 = pw0 * z;
                        let c1 = pw1 * z;
                        let c2 = pw2 * z;
                        let v0 = mesh_tri[0] as usize;
                        let v1 = mesh_tri[1] as usize;
                        let v2 = mesh_tri[2] as usize;
                        let pos = mesh.positions[v0] * c0
                            + mesh.positions[v1] * c1
                            + mesh.positions[v2] * c2;
                        let to_cam = cam_center - pos;
                        let dist = to_cam.length();
                        let view_dir = to_cam / dist;
                        let mut normal = (mesh.normals[v0] * c0
                            + mesh.normals[v1] * c1
                            + mesh.normals[v2] * c2)
                            .normalized();
                        if normal.length() < 0.5 {
                            // opposing vertex normals cancelled; fall back to
                            // the face normal
                            let fa = mesh.positions[v1] - mesh.positions[v0];
                            let fb = mesh.positions[v2] - mesh.positions[v0];
                            normal = fa.cross(fb).normalized();
                        }
                        out[local] = GPixel {
                            tri_id: tri.id,
                            uv: [
                                uvs[0][0] * c0 + uvs[1][0] * c1 + uvs[2][0] * c2,
                                uvs[0][1] * c0 + uvs[1][1] * c1 + uvs[2][1] * c2,
                            ],
                            normal,
                            tangent: (mesh.tangents[v0] * c0
                                + mesh.tangents[v1] * c1
                                + mesh.tangents[v2] * c2)
                                .normalized(),
                            bitangent: (mesh.bitangents[v0] * c0
                                + mesh.bitangents[v1] * c1
                                + mesh.bitangents[v2] * c2)
                                .normalized(),
                            view_dir,
                            cosv_geo: normal.dot(view_dir).clamp(0.0, 1.0),
                            dist,
                            duv_dx: tri.duv_dx,
                            duv_dy: tri.duv_dy,
                        };
                    }
                }
            }
        });

    Ok(GBuffer { width: w, height: h, pixels })
}

/// Result of decoding a tangent-space normal texel against a pixel frame.
#[derive(Debug, Clone, Copy)]
pub struct NormalDecode {
    /// Un-normalized tangent-frame combination nx*t + ny*b + nz*n_geo.
    pub raw: Vec3,
    pub raw_len: f64,
    /// Unit shading normal (geometric normal when the texel degenerates).
    pub normal: Vec3,
    pub fallback: bool,
}

const DECODE_EPS: f64 = 1e-12;

#[inline]
pub fn decode_normal(px: &GPixel, texel: [f64; 3]) -> NormalDecode {
    let raw = px.tangent * texel[0] + px.bitangent * texel[1] + px.normal * texel[2];
    let raw_len = raw.length();
    if raw_len < DECODE_EPS {
        NormalDecode {
            raw,
            raw_len,
            normal: px.normal,
            fallback: true,
        }
    } else {
        NormalDecode {
            raw,
            raw_len,
            normal: raw / raw_len,
            fallback: false,
        }
    }
}

/// Shading normals for every covered pixel (geometric normal fallback on
/// zero-length decodes); uncovered pixels get the zero vector.
pub fn apply_normal_map(gbuffer: &GBuffer, normal_texture: &Texture) -> Vec<Vec3> {
    gbuffer
        .pixels
        .iter()
        .map(|px| {
            if px.covered() {
                let texel = normal_texture.sample(px.uv[0], px.uv[1]);
                decode_normal(px, texel).normal
            } else {
                Vec3::ZERO
            }
        })
        .collect()
}

/// Mip level a classical forward renderer would fetch for this pixel:
/// log2 of the larger screen-axis footprint in texels, clamped at 0.
#[inline]
pub fn mip_level(px: &GPixel, texture_resolution: usize) -> f64 {
    let fx = (px.duv_dx[0] * px.duv_dx[0] + px.duv_dx[1] * px.duv_dx[1]).sqrt();
    let fy = (px.duv_dy[0] * px.duv_dy[0] + px.duv_dy[1] * px.duv_dy[1]).sqrt();
    let texels = fx.max(fy) * texture_resolution as f64;
    texels.log2().max(0.0)
}

/// Loss weight: cos * (1 - l) for mip levels below 1, zero otherwise.
#[inline]
pub fn pixel_weight(cosv: f64, level: f64) -> f64 {
    if level < 1.0 {
        cosv * (1.0 - level)
    } else {
        0.0
    }
}

/// Per-pixel loss weights W for the current texture resolution. The cosine
/// uses the shading normal from the current normal map; weights are treated
/// as constants by the gradient (recomputed per iteration, not
/// differentiated through).
pub fn compute_weights(gbuffer: &GBuffer, textures: &TextureSet) -> Vec<f64> {
    let res = textures.resolution();
    gbuffer
        .pixels
        .iter()
        .map(|px| {
            if !px.covered() {
                return 0.0;
            }
            let texel = textures.normal.sample(px.uv[0], px.uv[1]);
            let cosv = decode_normal(px, texel).normal.dot(px.view_dir).clamp(0.0, 1.0);
            pixel_weight(cosv, mip_level(px, res))
        })
        .collect()
}

/// Render the G-buffer with a texture set: per covered pixel, sample all
/// maps, decode the shading normal, evaluate radiance and multiply by the
/// attenuation map. Per-channel diffuse scales apply in parallel mode only
/// (the cross-polarized pass is the reference for k_d).
pub fn shade(
    gbuffer: &GBuffer,
    textures: &TextureSet,
    light_intensity: [f64; 3],
    attenuation: &AttenuationMap,
    mode: Mode,
) -> Result<Image> {
    if attenuation.width != gbuffer.width || attenuation.height != gbuffer.height {
        return Err(Error::data(format!(
            "attenuation map {}x{} does not match image {}x{}",
            attenuation.width, attenuation.height, gbuffer.width, gbuffer.height
        )));
    }
    let w = gbuffer.width;
    let mut image = Image::new(w, gbuffer.height, 3);
    image
        .data
        .par_chunks_mut(BAND_ROWS * w * 3)
        .enumerate()
        .for_each(|(band, out)| {
            let y0 = band * BAND_ROWS;
            for (row, row_out) in out.chunks_mut(w * 3).enumerate() {
                let y = y0 + row;
                for x in 0..w {
                    let px = gbuffer.pixel(x, y);
                    if !px.covered() {
                        continue;
                    }
                    let m = attenuation.at(x, y);
                    let rgb = shade_pixel(px, textures, light_intensity, mode);
                    for c in 0..3 {
                        row_out[x * 3 + c] = (rgb[c] * m[c]) as f32;
                    }
                }
            }
        });
    Ok(image)
}

/// Radiance of one covered pixel before attenuation.
#[inline]
pub fn shade_pixel(
    px: &GPixel,
    textures: &TextureSet,
    light_intensity: [f64; 3],
    mode: Mode,
) -> [f64; 3] {
    let (u, v) = (px.uv[0], px.uv[1]);
    let mut kd = textures.kd.sample(u, v);
    if mode == Mode::Parallel {
        for c in 0..3 {
            kd[c] *= textures.diffuse_scale[c];
        }
    }
    let ks = textures.ks.sample(u, v)[0];
    let ka = textures.ka.sample(u, v);
    let n_texel = textures.normal.sample(u, v);
    let cosv = decode_normal(px, n_texel).normal.dot(px.view_dir).clamp(0.0, 1.0);
    let inputs = ShadingInputs {
        cosv,
        dist: px.dist,
        kd,
        ks,
        ka,
        alpha: textures.alpha,
        intensity: light_intensity,
    };
    brdf::radiance(&inputs, mode)
}
