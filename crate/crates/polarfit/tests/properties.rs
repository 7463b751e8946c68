//! Property-based invariants over the sampling, mip and shading math.

use polarfit::brdf::{self, Mode, ShadingInputs};
use polarfit::texture::{build_mip_chain, Texture};
use proptest::prelude::*;

fn arb_texture(channels: usize) -> impl Strategy<Value = Texture> {
    (2usize..=4)
        .prop_flat_map(move |log_res| {
            let res = 1 << log_res;
            proptest::collection::vec(-2.0f64..2.0, res * res * channels)
                .prop_map(move |data| {
                    let mut t = Texture::new(res, channels);
                    t.data.copy_from_slice(&data);
                    t
                })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// <splat(0, uv, g), T> == g * sample(T, uv) per channel, to 1e-12.
    #[test]
    fn splat_is_adjoint_of_sample(
        texture in arb_texture(3),
        u in 0.0f64..1.0,
        v in 0.0f64..1.0,
        g in proptest::array::uniform3(-1.5f64..1.5),
    ) {
        let mut e = Texture::new(texture.resolution(), 3);
        e.splat(u, v, &g);
        let s = texture.sample(u, v);
        for c in 0..3 {
            let lhs: f64 = e.data.iter().skip(c).step_by(3)
                .zip(texture.data.iter().skip(c).step_by(3))
                .map(|(a, b)| a * b)
                .sum();
            prop_assert!((lhs - g[c] * s[c]).abs() < 1e-12);
        }
    }

    /// Every mip level preserves the mean of level 0.
    #[test]
    fn mip_chain_preserves_mean(texture in arb_texture(1)) {
        let m0 = texture.mean();
        for level in build_mip_chain(&texture) {
            prop_assert!((level.mean() - m0).abs() < 1e-6);
        }
    }

    /// Bilinear samples stay inside the convex hull of the texel values.
    #[test]
    fn bilinear_sample_in_value_hull(
        texture in arb_texture(1),
        u in 0.0f64..1.0,
        v in 0.0f64..1.0,
    ) {
        let lo = texture.data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = texture.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s = texture.sample(u, v)[0];
        prop_assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
    }

    /// Bilinear upsampling preserves the mean under clamp-to-edge within
    /// a loose bound and preserves constants exactly.
    #[test]
    fn upsample_of_constant_is_constant(value in -2.0f64..2.0) {
        let t = Texture::constant(8, 1, &[value]);
        let up = t.upsample2x();
        prop_assert!(up.data.iter().all(|&v| (v - value).abs() < 1e-12));
    }

    /// Outgoing radiance is non-negative and jointly linear in the
    /// reflectance maps.
    #[test]
    fn radiance_non_negative_and_linear(
        cosv in 0.0f64..1.0,
        dist in 0.5f64..3.0,
        kd in proptest::array::uniform3(0.0f64..1.0),
        ks in 0.0f64..1.0,
        ka in proptest::array::uniform3(0.0f64..0.3),
        alpha in 0.0f64..1.0,
        scale in 0.1f64..2.0,
    ) {
        let inputs = ShadingInputs { cosv, dist, kd, ks, ka, alpha, intensity: [10.0; 3] };
        let l = brdf::radiance(&inputs, Mode::Parallel);
        for v in l {
            prop_assert!(v >= 0.0);
        }
        let scaled = ShadingInputs {
            kd: [kd[0] * scale, kd[1] * scale, kd[2] * scale],
            ks: ks * scale,
            ka: [ka[0] * scale, ka[1] * scale, ka[2] * scale],
            ..inputs
        };
        let ls = brdf::radiance(&scaled, Mode::Parallel);
        for c in 0..3 {
            prop_assert!((ls[c] - scale * l[c]).abs() < 1e-10 * (1.0 + l[c].abs()));
        }
    }

    /// The Fresnel factor decreases monotonically with the cosine.
    #[test]
    fn fresnel_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        prop_assume!(a < b);
        prop_assert!(brdf::fresnel_schlick(a) > brdf::fresnel_schlick(b));
    }
}
