//! Sharpness-based frame selection: pick the sharpest frame from every
//! window of a simulated video sequence using the variance of the
//! Laplacian.
//!
//! Run with: cargo run --example select_frames

use polarfit::image::{select_sharpest, sharpness, Image};
use polarfit::rng::Pcg32;

/// Simulated capture: a textured frame degraded by a box blur whose radius
/// oscillates over time, like focus hunting on a handheld phone.
fn frame(seed: u64, blur: usize) -> Image {
    let mut rng = Pcg32::new(seed, 0);
    let n = 48usize;
    let mut sharp = Image::new(n, n, 1);
    for v in sharp.data.iter_mut() {
        *v = rng.next_f64() as f32;
    }
    if blur == 0 {
        return sharp;
    }
    let r = blur as i64;
    let mut out = Image::new(n, n, 1);
    for y in 0..n as i64 {
        for x in 0..n as i64 {
            let mut acc = 0.0;
            let mut count = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let xs = (x + dx).clamp(0, n as i64 - 1) as usize;
                    let ys = (y + dy).clamp(0, n as i64 - 1) as usize;
                    acc += sharp.get(xs, ys, 0);
                    count += 1.0;
                }
            }
            out.set(x as usize, y as usize, 0, acc / count);
        }
    }
    out
}

fn main() -> polarfit::Result<()> {
    let frames: Vec<Image> = (0..30)
        .map(|i| {
            let focus_cycle = [3usize, 2, 1, 0, 1, 2][i % 6];
            frame(100, focus_cycle)
        })
        .collect();

    for (i, f) in frames.iter().enumerate().take(6) {
        println!("frame {i:2}: sharpness {:.5}", sharpness(f)?);
    }
    println!("...");

    let selected = select_sharpest(&frames, 10)?;
    println!("selected frames (one per 10-frame window): {selected:?}");
    for idx in &selected {
        println!("  frame {idx}: sharpness {:.5}", sharpness(&frames[*idx])?);
    }
    Ok(())
}
