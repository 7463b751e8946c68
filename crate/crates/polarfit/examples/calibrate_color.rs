//! Affine color calibration from color-checker patches: fit c' = A c + b
//! from measured/reference pairs and undo a known tint.
//!
//! Run with: cargo run --example calibrate_color

use polarfit::pipeline::{apply_color_correction, fit_color_affine, ColorAffine};
use polarfit::rng::Pcg32;
use polarfit::Image;

fn main() -> polarfit::Result<()> {
    // a polarization filter tints the light; emulate that with a known
    // affine transform applied to otherwise-correct patch colors
    let filter_tint = ColorAffine {
        matrix: [[0.92, 0.03, 0.0], [0.01, 1.04, 0.02], [0.0, 0.05, 1.13]],
        offset: [0.012, -0.004, 0.02],
    };

    // 24 reference patches (a synthetic stand-in for the physical chart)
    let mut rng = Pcg32::new(24, 0);
    let reference: Vec<[f64; 3]> = (0..24)
        .map(|_| [rng.next_f64(), rng.next_f64(), rng.next_f64()])
        .collect();
    let measured: Vec<[f64; 3]> = reference
        .iter()
        .map(|r| {
            let mut m = [0.0; 3];
            for row in 0..3 {
                m[row] = filter_tint.matrix[row][0] * r[0]
                    + filter_tint.matrix[row][1] * r[1]
                    + filter_tint.matrix[row][2] * r[2]
                    + filter_tint.offset[row];
            }
            m
        })
        .collect();

    let correction = fit_color_affine(&measured, &reference)?;
    println!("fitted correction matrix:");
    for row in &correction.matrix {
        println!("  [{:8.4} {:8.4} {:8.4}]", row[0], row[1], row[2]);
    }
    println!(
        "offset: [{:.4} {:.4} {:.4}]",
        correction.offset[0], correction.offset[1], correction.offset[2]
    );

    // apply to a tinted image and report the residual against the original
    let mut original = Image::new(64, 64, 3);
    for v in original.data.iter_mut() {
        *v = rng.next_f64() as f32;
    }
    let tinted = apply_color_correction(&original, &filter_tint)?;
    let corrected = apply_color_correction(&tinted, &correction)?;
    let max_err = original
        .data
        .iter()
        .zip(corrected.data.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!("max per-pixel residual after correction: {max_err:.2e}");
    Ok(())
}
