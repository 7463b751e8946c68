//! Reverse-mode gradients of the weighted L1 photometric objective with
//! respect to every texture-set parameter, plus a finite-difference
//! verifier.
//!
//! The backward pass runs in two phases: a parallel per-pixel phase
//! computing each pixel's differential with respect to its sampled texture
//! values, and a sequential scatter phase accumulating those differentials
//! into texel gradients through the bilinear-splat adjoint. Scalar sums are
//! reduced in fixed band order, so results do not depend on worker count.
//!
//! The per-pixel weights W are recomputed from the current state once per
//! iteration and treated as constants by the gradient (they weight the
//! objective; they are not differentiated through). The finite-difference
//! verifier evaluates the objective under the same fixed weights.

use rayon::prelude::*;
use serde::Serialize;

use crate::brdf::{self, Mode, ShadingInputs};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::raster::{self, AttenuationMap, GBuffer};
use crate::rng::Pcg32;
use crate::texture::{Texture, TextureSet};

const BAND_ROWS: usize = 16;

/// Per-pixel loss weights plus the covered-pixel count the loss is
/// normalized by.
#[derive(Debug, Clone)]
pub struct PixelWeights {
    pub values: Vec<f64>,
    pub covered: usize,
}

impl PixelWeights {
    /// Mip-and-cosine weights for the current texture resolution.
    pub fn mip_weighted(gbuffer: &GBuffer, textures: &TextureSet) -> PixelWeights {
        PixelWeights {
            values: raster::compute_weights(gbuffer, textures),
            covered: gbuffer.coverage_count(),
        }
    }

    /// Uniform weight 1 on covered pixels (the calibration objective).
    pub fn coverage_only(gbuffer: &GBuffer) -> PixelWeights {
        PixelWeights {
            values: gbuffer
                .pixels
                .iter()
                .map(|p| if p.covered() { 1.0 } else { 0.0 })
                .collect(),
            covered: gbuffer.coverage_count(),
        }
    }
}

/// Gradient buffers matching [`TextureSet`] shapes.
#[derive(Debug, Clone)]
pub struct TextureGradients {
    pub kd: Texture,
    pub ks: Texture,
    pub ka: Texture,
    pub normal: Texture,
    pub alpha: f64,
    pub diffuse_scale: [f64; 3],
}

impl TextureGradients {
    pub fn zeros(resolution: usize) -> TextureGradients {
        TextureGradients {
            kd: Texture::new(resolution, 3),
            ks: Texture::new(resolution, 1),
            ka: Texture::new(resolution, 3),
            normal: Texture::new(resolution, 3),
            alpha: 0.0,
            diffuse_scale: [0.0; 3],
        }
    }

    pub fn add_scaled(&mut self, other: &TextureGradients, s: f64) {
        for (a, b) in self.kd.data.iter_mut().zip(other.kd.data.iter()) {
            *a += s * b;
        }
        for (a, b) in self.ks.data.iter_mut().zip(other.ks.data.iter()) {
            *a += s * b;
        }
        for (a, b) in self.ka.data.iter_mut().zip(other.ka.data.iter()) {
            *a += s * b;
        }
        for (a, b) in self.normal.data.iter_mut().zip(other.normal.data.iter()) {
            *a += s * b;
        }
        self.alpha += s * other.alpha;
        for c in 0..3 {
            self.diffuse_scale[c] += s * other.diffuse_scale[c];
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.kd.data.iter_mut() {
            *v *= s;
        }
        for v in self.ks.data.iter_mut() {
            *v *= s;
        }
        for v in self.ka.data.iter_mut() {
            *v *= s;
        }
        for v in self.normal.data.iter_mut() {
            *v *= s;
        }
        self.alpha *= s;
        for c in 0..3 {
            self.diffuse_scale[c] *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.kd.is_finite()
            && self.ks.is_finite()
            && self.ka.is_finite()
            && self.normal.is_finite()
            && self.alpha.is_finite()
            && self.diffuse_scale.iter().all(|v| v.is_finite())
    }
}

#[inline]
fn l1_sign(r: f64) -> f64 {
    // subgradient at exactly zero residual is zero
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Weighted L1 photometric loss, normalized by the covered-pixel count.
pub fn loss_forward(rendered: &Image, target: &Image, weights: &PixelWeights) -> Result<f64> {
    if rendered.width != target.width
        || rendered.height != target.height
        || rendered.channels != target.channels
    {
        return Err(Error::data("loss_forward: image shapes differ"));
    }
    if weights.values.len() != rendered.pixel_count() {
        return Err(Error::data("loss_forward: weight count mismatch"));
    }
    let channels = rendered.channels;
    let mut total = 0.0;
    for (p, w) in weights.values.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let base = p * channels;
        for c in 0..channels {
            total += w * (rendered.data[base + c] as f64 - target.data[base + c] as f64).abs();
        }
    }
    Ok(total / weights.covered.max(1) as f64)
}

/// Forward evaluation of the objective for one view, entirely in f64 and
/// on the same code path the backward pass differentiates. Used by the
/// optimizer loop and the finite-difference verifier.
pub fn view_loss(
    gbuffer: &GBuffer,
    textures: &TextureSet,
    light_intensity: [f64; 3],
    attenuation: &AttenuationMap,
    mode: Mode,
    target: &Image,
    weights: &PixelWeights,
) -> f64 {
    let w = gbuffer.width;
    let partials: Vec<f64> = gbuffer
        .pixels
        .par_chunks(BAND_ROWS * w)
        .enumerate()
        .map(|(band, chunk)| {
            let mut sum = 0.0;
            let offset = band * BAND_ROWS * w;
            for (k, px) in chunk.iter().enumerate() {
                if !px.covered() {
                    continue;
                }
                let p = offset + k;
                let weight = weights.values[p];
                if weight == 0.0 {
                    continue;
                }
                let (x, y) = (p % w, p / w);
                let m = attenuation.at(x, y);
                let rgb = raster::shade_pixel(px, textures, light_intensity, mode);
                for c in 0..3 {
                    sum += weight * (rgb[c] * m[c] - target.data[p * 3 + c] as f64).abs();
                }
            }
            sum
        })
        .collect();
    partials.iter().sum::<f64>() / weights.covered.max(1) as f64
}

/// Per-pixel differential payload produced by the parallel phase and
/// scattered sequentially afterwards.
#[derive(Clone, Copy, Default)]
struct PixelDiff {
    uv: [f64; 2],
    kd: [f64; 3],
    ks: f64,
    ka: [f64; 3],
    normal: [f64; 3],
}

#[derive(Clone, Copy, Default)]
struct BandSums {
    loss: f64,
    alpha: f64,
    scale: [f64; 3],
    atten_loss_terms: f64,
}

/// Optional extra output of [`backward`]: the gradient with respect to the
/// per-camera-pixel attenuation map (used by the light calibration, which
/// optimizes M jointly with the plane texture).
pub struct AttenuationGrad {
    pub data: Vec<f64>,
}

pub struct BackwardOutput {
    pub loss: f64,
    pub grads: TextureGradients,
    pub attenuation_grad: Option<AttenuationGrad>,
}

/// Reverse-mode gradients of the weighted L1 objective for one view.
pub fn backward(
    gbuffer: &GBuffer,
    textures: &TextureSet,
    light_intensity: [f64; 3],
    attenuation: &AttenuationMap,
    mode: Mode,
    target: &Image,
    weights: &PixelWeights,
    want_attenuation_grad: bool,
) -> Result<BackwardOutput> {
    if target.width != gbuffer.width || target.height != gbuffer.height || target.channels != 3 {
        return Err(Error::data("backward: target shape mismatch"));
    }
    if attenuation.width != gbuffer.width || attenuation.height != gbuffer.height {
        return Err(Error::data("backward: attenuation shape mismatch"));
    }
    if weights.values.len() != gbuffer.pixels.len() {
        return Err(Error::data("backward: weight count mismatch"));
    }

    let w = gbuffer.width;
    let inv_n = 1.0 / weights.covered.max(1) as f64;
    let n_px = gbuffer.pixels.len();

    let mut diffs: Vec<PixelDiff> = vec![PixelDiff::default(); n_px];
    let mut atten_grad = if want_attenuation_grad {
        Some(vec![0.0f64; attenuation.width * attenuation.height * attenuation.channels])
    } else {
        None
    };

    // Parallel phase: each band fills its own slice of the per-pixel
    // differentials (and attenuation gradient, which is also per-pixel).
    let band_sums: Vec<BandSums> = {
        let mut atten_slices: Vec<Option<&mut [f64]>> = Vec::new();
        if let Some(buf) = atten_grad.as_mut() {
            let stride = BAND_ROWS * w * attenuation.channels;
            for chunk in buf.chunks_mut(stride) {
                atten_slices.push(Some(chunk));
            }
        } else {
            for _ in 0..n_px.div_ceil(BAND_ROWS * w) {
                atten_slices.push(None);
            }
        }

        diffs
            .par_chunks_mut(BAND_ROWS * w)
            .zip(atten_slices.into_par_iter())
            .enumerate()
            .map(|(band, (out, mut atten_out))| {
                let offset = band * BAND_ROWS * w;
                let mut sums = BandSums::default();
                for (k, slot) in out.iter_mut().enumerate() {
                    let p = offset + k;
                    let px = &gbuffer.pixels[p];
                    if !px.covered() {
                        continue;
                    }
                    let weight = weights.values[p];
                    let (x, y) = (p % w, p / w);
                    let m = attenuation.at(x, y);

                    // forward recompute
                    let (u, v) = (px.uv[0], px.uv[1]);
                    let kd_texel = textures.kd.sample(u, v);
                    let mut kd_eff = kd_texel;
                    if mode == Mode::Parallel {
                        for c in 0..3 {
                            kd_eff[c] *= textures.diffuse_scale[c];
                        }
                    }
                    let ks = textures.ks.sample(u, v)[0];
                    let ka = textures.ka.sample(u, v);
                    let n_texel = textures.normal.sample(u, v);
                    let decode = raster::decode_normal(px, n_texel);
                    let cos_raw = decode.normal.dot(px.view_dir);
                    let cosv = cos_raw.clamp(0.0, 1.0);
                    let inputs = ShadingInputs {
                        cosv,
                        dist: px.dist,
                        kd: kd_eff,
                        ks,
                        ka,
                        alpha: textures.alpha,
                        intensity: light_intensity,
                    };
                    let radiance = brdf::radiance(&inputs, mode);

                    // loss value and dLoss/dL per channel
                    let mut d_l = [0.0f64; 3];
                    for c in 0..3 {
                        let residual = radiance[c] * m[c] - target.data[p * 3 + c] as f64;
                        sums.loss += weight * residual.abs();
                        d_l[c] = weight * l1_sign(residual) * m[c] * inv_n;
                    }
                    sums.atten_loss_terms += 1.0;

                    if let Some(atten_slice) = atten_out.as_mut() {
                        // dLoss/dM = W * sign(residual) * L / N, summed over
                        // channels for a monochrome map
                        let local = k * attenuation.channels;
                        for c in 0..3 {
                            let residual = radiance[c] * m[c] - target.data[p * 3 + c] as f64;
                            let g = weight * l1_sign(residual) * radiance[c] * inv_n;
                            if attenuation.channels == 1 {
                                atten_slice[local] += g;
                            } else {
                                atten_slice[local + c] += g;
                            }
                        }
                    }

                    if weight == 0.0 {
                        continue; // no gradient flows through W = 0 pixels
                    }

                    let d = brdf::radiance_derivatives(&inputs, mode);
                    let mut diff = PixelDiff {
                        uv: [u, v],
                        ..PixelDiff::default()
                    };
                    for c in 0..3 {
                        let scale_c = if mode == Mode::Parallel {
                            textures.diffuse_scale[c]
                        } else {
                            1.0
                        };
                        diff.kd[c] = d.d_kd[c] * d_l[c] * scale_c;
                        diff.ka[c] = d.d_ka[c] * d_l[c];
                        diff.ks += d.d_ks[c] * d_l[c];
                        sums.alpha += d.d_alpha[c] * d_l[c];
                        if mode == Mode::Parallel {
                            sums.scale[c] += d.d_kd[c] * d_l[c] * kd_texel[c];
                        }
                    }

                    // normal-map chain: through clamp, normalization and the
                    // tangent-frame decode
                    if !decode.fallback && cos_raw > 0.0 && cos_raw < 1.0 {
                        let g_cos: f64 = (0..3).map(|c| d.d_cosv[c] * d_l[c]).sum();
                        let dcos_dm = (px.view_dir - decode.normal * cos_raw) / decode.raw_len;
                        diff.normal = [
                            g_cos * dcos_dm.dot(px.tangent),
                            g_cos * dcos_dm.dot(px.bitangent),
                            g_cos * dcos_dm.dot(px.normal),
                        ];
                    }
                    *slot = diff;
                }
                sums
            })
            .collect()
    };

    let mut loss = 0.0;
    let mut grads = TextureGradients::zeros(textures.resolution());
    for sums in &band_sums {
        loss += sums.loss;
        grads.alpha += sums.alpha;
        for c in 0..3 {
            grads.diffuse_scale[c] += sums.scale[c];
        }
    }
    loss *= inv_n;

    if !loss.is_finite() {
        return Err(Error::numerical("non-finite loss in backward pass"));
    }

    // Sequential scatter in pixel order: deterministic regardless of the
    // worker count used above.
    for (p, diff) in diffs.iter().enumerate() {
        if !gbuffer.pixels[p].covered() || weights.values[p] == 0.0 {
            continue;
        }
        let (u, v) = (diff.uv[0], diff.uv[1]);
        grads.kd.splat(u, v, &diff.kd);
        grads.ka.splat(u, v, &diff.ka);
        if mode == Mode::Parallel {
            grads.ks.splat(u, v, &[diff.ks]);
        }
        grads.normal.splat(u, v, &diff.normal);
    }

    if !grads.is_finite() {
        return Err(Error::numerical("non-finite gradient in backward pass"));
    }

    Ok(BackwardOutput {
        loss,
        grads,
        attenuation_grad: atten_grad.map(|data| AttenuationGrad { data }),
    })
}

// ---------------------------------------------------------------------------
// Finite-difference verification harness
// ---------------------------------------------------------------------------

/// One view of a gradient-check scene: fixed geometry, target and weights.
pub struct CheckView<'a> {
    pub gbuffer: &'a GBuffer,
    pub target: &'a Image,
    pub weights: PixelWeights,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub samples_per_map: usize,
    pub h_texel: f64,
    pub h_scalar: f64,
    pub threshold: f64,
    pub seed: u64,
    /// Multiplied into the analytic k_s gradients before comparison; values
    /// other than 1 deliberately corrupt the check to prove it can fail.
    pub corrupt_ks: f64,
}

impl Default for GradCheckConfig {
    fn default() -> GradCheckConfig {
        GradCheckConfig {
            samples_per_map: 100,
            h_texel: 1e-4,
            h_scalar: 1e-5,
            threshold: 1e-3,
            seed: 7,
            corrupt_ks: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub class: String,
    pub samples: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub threshold: f64,
    pub passed: bool,
    pub classes: Vec<ClassReport>,
}

impl GradCheckReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-6, a.abs() + b.abs())
}

/// Build a target image for gradient checking: the reference render plus a
/// large positive bias on the left half (stable negative residuals) and
/// zero on the right half (stable positive residuals). Central differences
/// through an L1 objective are only meaningful while no residual changes
/// sign inside the step, and the bias guarantees that; both sign branches
/// of the subgradient still get exercised.
pub fn gradcheck_target(
    gbuffer: &GBuffer,
    reference: &TextureSet,
    light_intensity: [f64; 3],
    attenuation: &AttenuationMap,
    mode: Mode,
    bias: f64,
) -> Result<Image> {
    let mut target = raster::shade(gbuffer, reference, light_intensity, attenuation, mode)?;
    let (w, h) = (target.width, target.height);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = if x < w / 2 { target.get(x, y, c) + bias as f32 } else { 0.0 };
                target.set(x, y, c, v);
            }
        }
    }
    Ok(target)
}

/// Compare analytic gradients against central finite differences of the
/// same fixed-weight objective, per parameter class. Texel samples are
/// drawn from texels actually covered by weight-positive observations.
pub fn finite_diff_check(
    views: &[CheckView<'_>],
    textures: &TextureSet,
    light_intensity: [f64; 3],
    attenuation: &AttenuationMap,
    mode: Mode,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if views.is_empty() {
        return Err(Error::data("finite_diff_check: no views"));
    }
    let inv_views = 1.0 / views.len() as f64;

    // analytic gradients, averaged over views like a batch
    let mut analytic = TextureGradients::zeros(textures.resolution());
    for view in views {
        let out = backward(
            view.gbuffer,
            textures,
            light_intensity,
            attenuation,
            mode,
            view.target,
            &view.weights,
            false,
        )?;
        analytic.add_scaled(&out.grads, inv_views);
    }
    for v in analytic.ks.data.iter_mut() {
        *v *= config.corrupt_ks;
    }

    let batch_loss = |ts: &TextureSet| -> f64 {
        views
            .iter()
            .map(|view| {
                view_loss(
                    view.gbuffer,
                    ts,
                    light_intensity,
                    attenuation,
                    mode,
                    view.target,
                    &view.weights,
                )
            })
            .sum::<f64>()
            * inv_views
    };

    // texels observable through at least one weight-positive pixel
    let res = textures.resolution();
    let mut footprint = Texture::new(res, 1);
    for view in views {
        for (p, px) in view.gbuffer.pixels.iter().enumerate() {
            if px.covered() && view.weights.values[p] > 0.0 {
                footprint.splat(px.uv[0], px.uv[1], &[1.0]);
            }
        }
    }
    let observed: Vec<usize> = (0..res * res)
        .filter(|&t| footprint.data[t] > 1e-6)
        .collect();
    if observed.is_empty() {
        return Err(Error::data("finite_diff_check: no observed texels"));
    }

    let mut rng = Pcg32::new(config.seed, 21);
    let mut classes = Vec::new();
    let check_map = |name: &str,
                         get_grad: &dyn Fn(&TextureGradients, usize) -> f64,
                         perturb: &dyn Fn(&mut TextureSet, usize, f64),
                         channels: usize,
                         rng: &mut Pcg32|
     -> ClassReport {
        let mut max_rel = 0.0f64;
        let mut sum_rel = 0.0f64;
        for _ in 0..config.samples_per_map {
            let texel = observed[rng.next_below(observed.len() as u32) as usize];
            let ch = rng.next_below(channels as u32) as usize;
            let slot = texel * channels + ch;
            let mut plus = textures.clone();
            perturb(&mut plus, slot, config.h_texel);
            let mut minus = textures.clone();
            perturb(&mut minus, slot, -config.h_texel);
            let fd = (batch_loss(&plus) - batch_loss(&minus)) / (2.0 * config.h_texel);
            let an = get_grad(&analytic, slot);
            let rel = rel_error(an, fd);
            max_rel = max_rel.max(rel);
            sum_rel += rel;
        }
        ClassReport {
            class: name.to_string(),
            samples: config.samples_per_map,
            max_rel_error: max_rel,
            mean_rel_error: sum_rel / config.samples_per_map as f64,
        }
    };

    classes.push(check_map(
        "kd",
        &|g, s| g.kd.data[s],
        &|ts, s, h| ts.kd.data[s] += h,
        3,
        &mut rng,
    ));
    classes.push(check_map(
        "ks",
        &|g, s| g.ks.data[s],
        &|ts, s, h| ts.ks.data[s] += h,
        1,
        &mut rng,
    ));
    classes.push(check_map(
        "ka",
        &|g, s| g.ka.data[s],
        &|ts, s, h| ts.ka.data[s] += h,
        3,
        &mut rng,
    ));
    classes.push(check_map(
        "normal",
        &|g, s| g.normal.data[s],
        &|ts, s, h| ts.normal.data[s] += h,
        3,
        &mut rng,
    ));

    // scalars: alpha and the per-channel diffuse scales
    {
        let mut plus = textures.clone();
        plus.alpha += config.h_scalar;
        let mut minus = textures.clone();
        minus.alpha -= config.h_scalar;
        let fd = (batch_loss(&plus) - batch_loss(&minus)) / (2.0 * config.h_scalar);
        let rel = rel_error(analytic.alpha, fd);
        classes.push(ClassReport {
            class: "alpha".to_string(),
            samples: 1,
            max_rel_error: rel,
            mean_rel_error: rel,
        });
    }
    {
        let mut max_rel = 0.0f64;
        let mut sum_rel = 0.0;
        for c in 0..3 {
            let mut plus = textures.clone();
            plus.diffuse_scale[c] += config.h_scalar;
            let mut minus = textures.clone();
            minus.diffuse_scale[c] -= config.h_scalar;
            let fd = (batch_loss(&plus) - batch_loss(&minus)) / (2.0 * config.h_scalar);
            let rel = rel_error(analytic.diffuse_scale[c], fd);
            max_rel = max_rel.max(rel);
            sum_rel += rel;
        }
        classes.push(ClassReport {
            class: "diffuse_scale".to_string(),
            samples: 3,
            max_rel_error: max_rel,
            mean_rel_error: sum_rel / 3.0,
        });
    }

    let passed = classes.iter().all(|c| c.max_rel_error < config.threshold);
    Ok(GradCheckReport {
        threshold: config.threshold,
        passed,
        classes,
    })
}
