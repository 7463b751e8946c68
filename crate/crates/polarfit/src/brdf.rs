//! Reflectance model for a co-located camera and point light.
//!
//! With the light at the camera origin the incident and outgoing directions
//! coincide, the half-vector equals the view vector, and every term reduces
//! to a function of a single cosine `n.w`. This also makes reciprocity hold
//! by construction: swapping view and light labels is an identity here.
//!
//! The model: a Cook-Torrance specular lobe with a two-lobe Blinn-Phong
//! distribution (exponents 12 and 48, normalized, blended by a global
//! roughness factor), Schlick Fresnel, an Ashikhmin-Shirley diffuse term,
//! and a Fresnel-modulated ambient term. Outgoing radiance is
//! `f * cos / dist^2 * intensity`, attenuated per-pixel downstream.

/// Fresnel reflectance of skin at normal incidence.
pub const F0: f64 = 0.04;

/// Blinn-Phong exponents of the two specular lobes. `alpha` blends toward
/// the wide lobe: alpha = 1 is pure exponent 12 (rough), alpha = 0 pure 48.
pub const LOBE_WIDE: f64 = 12.0;
pub const LOBE_SHARP: f64 = 48.0;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const KD_NORM: f64 = 28.0 / (23.0 * std::f64::consts::PI);

/// Everything the BRDF needs at a single shading point.
#[derive(Debug, Clone, Copy)]
pub struct ShadingInputs {
    /// n.w of the shading normal, clamped to [0,1] upstream.
    pub cosv: f64,
    /// Distance to the co-located light, in unit-mesh units.
    pub dist: f64,
    pub kd: [f64; 3],
    pub ks: f64,
    pub ka: [f64; 3],
    pub alpha: f64,
    pub intensity: [f64; 3],
}

/// Partial derivatives of outgoing radiance per output channel.
#[derive(Debug, Clone, Copy, Default)]
pub struct BrdfDerivatives {
    /// dL_c/dkd_c (the kd Jacobian is diagonal).
    pub d_kd: [f64; 3],
    pub d_ks: [f64; 3],
    /// dL_c/dka_c (diagonal).
    pub d_ka: [f64; 3],
    pub d_alpha: [f64; 3],
    pub d_cosv: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Cross-polarized: single-bounce specular blocked, f_s = 0.
    Cross,
    /// Parallel-polarized: full BRDF.
    Parallel,
}

impl From<crate::camera::Polarization> for Mode {
    fn from(p: crate::camera::Polarization) -> Mode {
        match p {
            crate::camera::Polarization::Cross => Mode::Cross,
            crate::camera::Polarization::Parallel => Mode::Parallel,
        }
    }
}

pub fn fresnel_schlick(cosv: f64) -> f64 {
    F0 + (1.0 - F0) * (1.0 - cosv).powi(5)
}

fn fresnel_schlick_dc(cosv: f64) -> f64 {
    -5.0 * (1.0 - F0) * (1.0 - cosv).powi(4)
}

fn lobe(p: f64, cosv: f64) -> f64 {
    (p + 2.0) / TWO_PI * cosv.powf(p)
}

fn lobe_dc(p: f64, cosv: f64) -> f64 {
    if cosv <= 0.0 {
        0.0
    } else {
        (p + 2.0) / TWO_PI * p * cosv.powf(p - 1.0)
    }
}

/// Two-lobe normalized Blinn-Phong distribution, `alpha` blending wide vs
/// sharp. Under co-location n.h = n.w = cosv.
pub fn blinn_phong_d(cosv: f64, alpha: f64) -> f64 {
    alpha * lobe(LOBE_WIDE, cosv) + (1.0 - alpha) * lobe(LOBE_SHARP, cosv)
}

fn blinn_phong_d_dc(cosv: f64, alpha: f64) -> f64 {
    alpha * lobe_dc(LOBE_WIDE, cosv) + (1.0 - alpha) * lobe_dc(LOBE_SHARP, cosv)
}

fn blinn_phong_d_dalpha(cosv: f64) -> f64 {
    lobe(LOBE_WIDE, cosv) - lobe(LOBE_SHARP, cosv)
}

/// Cook-Torrance shadowing/masking; the co-located form collapses to
/// min(1, 2 cos^2).
pub fn geometry_term(cosv: f64) -> f64 {
    (2.0 * cosv * cosv).min(1.0)
}

fn geometry_term_dc(cosv: f64) -> f64 {
    if 2.0 * cosv * cosv < 1.0 {
        4.0 * cosv
    } else {
        0.0
    }
}

/// Ashikhmin-Shirley interpolation factor s(c) = 1 - (1 - c/2)^5 and its
/// derivative; shared by the diffuse and ambient terms.
fn shirley(cosv: f64) -> (f64, f64) {
    let base = 1.0 - 0.5 * cosv;
    let s = 1.0 - base.powi(5);
    let ds = 2.5 * base.powi(4);
    (s, ds)
}

/// Specular BRDF value, replicated per channel.
pub fn f_specular(inputs: &ShadingInputs) -> [f64; 3] {
    let c = inputs.cosv;
    if c <= 0.0 {
        return [0.0; 3]; // 0/0 limit of the cosine-weighted lobe is 0
    }
    let d = blinn_phong_d(c, inputs.alpha);
    let g = geometry_term(c);
    let fr = fresnel_schlick(c);
    let v = inputs.ks * d * g * fr / (4.0 * c * c);
    [v; 3]
}

/// The scalar multiplying k_d in the diffuse term; exposed so the albedo
/// back-projection initializer can invert it.
pub fn diffuse_response(cosv: f64) -> f64 {
    let (s, _) = shirley(cosv);
    KD_NORM * (1.0 - F0) * s * s
}

pub fn f_diffuse(inputs: &ShadingInputs) -> [f64; 3] {
    let factor = diffuse_response(inputs.cosv);
    [
        factor * inputs.kd[0],
        factor * inputs.kd[1],
        factor * inputs.kd[2],
    ]
}

pub fn f_ambient(inputs: &ShadingInputs) -> [f64; 3] {
    let (s, _) = shirley(inputs.cosv);
    let factor = 1.0 - (1.0 - F0) * s * s;
    [
        factor * inputs.ka[0],
        factor * inputs.ka[1],
        factor * inputs.ka[2],
    ]
}

/// Outgoing radiance `(f_d + f_a [+ f_s]) * cosv * intensity / dist^2`.
/// The ambient term sits inside f, so it sees the cosine and falloff too.
pub fn radiance(inputs: &ShadingInputs, mode: Mode) -> [f64; 3] {
    debug_assert!(inputs.dist > 0.0);
    let fd = f_diffuse(inputs);
    let fa = f_ambient(inputs);
    let fs = match mode {
        Mode::Parallel => f_specular(inputs),
        Mode::Cross => [0.0; 3],
    };
    let geom = inputs.cosv / (inputs.dist * inputs.dist);
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = (fd[c] + fa[c] + fs[c]) * geom * inputs.intensity[c];
    }
    out
}

/// Exact partials of [`radiance`] with respect to every optimizable input.
pub fn radiance_derivatives(inputs: &ShadingInputs, mode: Mode) -> BrdfDerivatives {
    debug_assert!(inputs.dist > 0.0);
    let c = inputs.cosv;
    let falloff = 1.0 / (inputs.dist * inputs.dist);
    let (s, ds) = shirley(c);
    let s2 = s * s;
    let ds2 = 2.0 * s * ds;

    let fd_factor = KD_NORM * (1.0 - F0) * s2;
    let fd_factor_dc = KD_NORM * (1.0 - F0) * ds2;
    let fa_factor = 1.0 - (1.0 - F0) * s2;
    let fa_factor_dc = -(1.0 - F0) * ds2;

    // Specular pieces (parallel mode, cosv > 0 only).
    let (fs, fs_dc, fs_dks, fs_dalpha) = if mode == Mode::Parallel && c > 0.0 {
        let d = blinn_phong_d(c, inputs.alpha);
        let d_dc = blinn_phong_d_dc(c, inputs.alpha);
        let d_da = blinn_phong_d_dalpha(c);
        let g = geometry_term(c);
        let g_dc = geometry_term_dc(c);
        let fr = fresnel_schlick(c);
        let fr_dc = fresnel_schlick_dc(c);
        let inv4c2 = 1.0 / (4.0 * c * c);
        let h = d * g * fr * inv4c2;
        let h_dc = (d_dc * g * fr + d * g_dc * fr + d * g * fr_dc) * inv4c2 - 2.0 * h / c;
        (
            inputs.ks * h,
            inputs.ks * h_dc,
            h,
            inputs.ks * d_da * g * fr * inv4c2,
        )
    } else {
        (0.0, 0.0, 0.0, 0.0)
    };

    let mut out = BrdfDerivatives::default();
    for ch in 0..3 {
        let e = inputs.intensity[ch] * falloff;
        let fd = fd_factor * inputs.kd[ch];
        let fa = fa_factor * inputs.ka[ch];
        out.d_kd[ch] = fd_factor * c * e;
        out.d_ka[ch] = fa_factor * c * e;
        out.d_ks[ch] = fs_dks * c * e;
        out.d_alpha[ch] = fs_dalpha * c * e;
        let f_total = fd + fa + fs;
        let f_total_dc = fd_factor_dc * inputs.kd[ch] + fa_factor_dc * inputs.ka[ch] + fs_dc;
        out.d_cosv[ch] = f_total_dc * c * e + f_total * e;
    }
    out
}
