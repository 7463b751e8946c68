//! Square power-of-two textures, bilinear sampling and its exact adjoint,
//! mip construction, and the set of optimizable material maps.
//!
//! UV convention: (0,0) is the lower-left corner of the texel grid and texel
//! (i, j) has its center at ((i+0.5)/R, (j+0.5)/R). Addressing clamps to the
//! edge. Sampling and splatting share one weight computation, which is what
//! makes the splat the exact adjoint of the sample.

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    resolution: usize,
    channels: usize,
    pub data: Vec<f64>,
}

/// Indices and weights of the four texels a bilinear lookup touches.
#[derive(Debug, Clone, Copy)]
pub struct BilinearTaps {
    pub texel: [usize; 4],
    pub weight: [f64; 4],
}

impl Texture {
    pub fn new(resolution: usize, channels: usize) -> Texture {
        assert!(resolution.is_power_of_two(), "resolution must be a power of two");
        assert!(channels == 1 || channels == 3);
        Texture {
            resolution,
            channels,
            data: vec![0.0; resolution * resolution * channels],
        }
    }

    pub fn constant(resolution: usize, channels: usize, value: &[f64]) -> Texture {
        assert_eq!(value.len(), channels);
        let mut t = Texture::new(resolution, channels);
        for texel in t.data.chunks_exact_mut(channels) {
            texel.copy_from_slice(value);
        }
        t
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn texel_count(&self) -> usize {
        self.resolution * self.resolution
    }

    #[inline]
    pub fn texel_index(&self, i: usize, j: usize) -> usize {
        (j * self.resolution + i) * self.channels
    }

    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        let base = self.texel_index(i, j);
        &self.data[base..base + self.channels]
    }

    pub fn set(&mut self, i: usize, j: usize, value: &[f64]) {
        let base = self.texel_index(i, j);
        self.data[base..base + self.channels].copy_from_slice(value);
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The four clamp-to-edge taps for a lookup at (u, v).
    #[inline]
    pub fn taps(&self, u: f64, v: f64) -> BilinearTaps {
        let r = self.resolution;
        let x = u * r as f64 - 0.5;
        let y = v * r as f64 - 0.5;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let clamp = |t: f64| -> usize { (t.max(0.0) as usize).min(r - 1) };
        let (i0, i1) = (clamp(x0), clamp(x0 + 1.0));
        let (j0, j1) = (clamp(y0), clamp(y0 + 1.0));
        BilinearTaps {
            texel: [
                (j0 * r + i0) * self.channels,
                (j0 * r + i1) * self.channels,
                (j1 * r + i0) * self.channels,
                (j1 * r + i1) * self.channels,
            ],
            weight: [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ],
        }
    }

    /// Bilinear lookup; unused trailing channels of the result are zero.
    #[inline]
    pub fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let taps = self.taps(u, v);
        let mut out = [0.0; 3];
        for k in 0..4 {
            let base = taps.texel[k];
            let w = taps.weight[k];
            for c in 0..self.channels {
                out[c] += w * self.data[base + c];
            }
        }
        out
    }

    /// Adjoint of [`Texture::sample`]: accumulates `value` into the four
    /// taps with the same weights. For any texture T, uv and per-channel g:
    /// <splat(0, uv, g), T> == g * sample(T, uv).
    #[inline]
    pub fn splat(&mut self, u: f64, v: f64, value: &[f64]) {
        debug_assert_eq!(value.len(), self.channels);
        let taps = self.taps(u, v);
        for k in 0..4 {
            let base = taps.texel[k];
            let w = taps.weight[k];
            for c in 0..self.channels {
                self.data[base + c] += w * value[c];
            }
        }
    }

    /// One 2x2 box-filter reduction; resolution halves.
    pub fn downsample2x(&self) -> Texture {
        assert!(self.resolution >= 2);
        let half = self.resolution / 2;
        let mut out = Texture::new(half, self.channels);
        for j in 0..half {
            for i in 0..half {
                for c in 0..self.channels {
                    let s = self.get(2 * i, 2 * j)[c]
                        + self.get(2 * i + 1, 2 * j)[c]
                        + self.get(2 * i, 2 * j + 1)[c]
                        + self.get(2 * i + 1, 2 * j + 1)[c];
                    let base = out.texel_index(i, j);
                    out.data[base + c] = 0.25 * s;
                }
            }
        }
        out
    }

    /// Repeated box reduction down to `target` (a power of two <= resolution).
    pub fn downsample_to(&self, target: usize) -> Texture {
        assert!(target.is_power_of_two() && target <= self.resolution);
        let mut cur = self.clone();
        while cur.resolution > target {
            cur = cur.downsample2x();
        }
        cur
    }

    /// Bilinear 2x upsample; constant textures stay constant.
    pub fn upsample2x(&self) -> Texture {
        let res = self.resolution * 2;
        let mut out = Texture::new(res, self.channels);
        for j in 0..res {
            for i in 0..res {
                let u = (i as f64 + 0.5) / res as f64;
                let v = (j as f64 + 0.5) / res as f64;
                let s = self.sample(u, v);
                let base = out.texel_index(i, j);
                for c in 0..self.channels {
                    out.data[base + c] = s[c];
                }
            }
        }
        out
    }

    pub fn to_image(&self) -> Image {
        // texture row j=0 sits at the bottom of the image so previews show v up
        let r = self.resolution;
        let mut img = Image::new(r, r, self.channels);
        for j in 0..r {
            for i in 0..r {
                let t = self.get(i, j);
                for c in 0..self.channels {
                    img.set(i, r - 1 - j, c, t[c] as f32);
                }
            }
        }
        img
    }

    pub fn from_image(img: &Image) -> Result<Texture> {
        if img.width != img.height || !img.width.is_power_of_two() {
            return Err(Error::data(format!(
                "texture image must be square power-of-two, got {}x{}",
                img.width, img.height
            )));
        }
        let r = img.width;
        let mut t = Texture::new(r, img.channels);
        for j in 0..r {
            for i in 0..r {
                let base = t.texel_index(i, j);
                for c in 0..img.channels {
                    t.data[base + c] = img.get(i, r - 1 - j, c) as f64;
                }
            }
        }
        Ok(t)
    }
}

/// Full mip pyramid: level 0 is the input, each level a 2x2 box filter of
/// the previous, ending at 1x1.
pub fn build_mip_chain(texture: &Texture) -> Vec<Texture> {
    let mut chain = vec![texture.clone()];
    while chain.last().unwrap().resolution() > 1 {
        chain.push(chain.last().unwrap().downsample2x());
    }
    chain
}

/// The unknowns of the appearance optimization.
///
/// `normal` stores tangent-space vectors directly as floats (no [0,1]
/// encoding); a flat texel is (0, 0, 1) and decode renormalizes.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureSet {
    pub kd: Texture,
    pub ks: Texture,
    pub ka: Texture,
    pub normal: Texture,
    pub alpha: f64,
    pub diffuse_scale: [f64; 3],
}

impl TextureSet {
    /// Neutral initialization: mid-gray albedo, no specular, no ambient,
    /// flat normals, mid roughness blend, unit diffuse scales.
    pub fn flat(resolution: usize) -> TextureSet {
        TextureSet {
            kd: Texture::constant(resolution, 3, &[0.5, 0.5, 0.5]),
            ks: Texture::constant(resolution, 1, &[0.0]),
            ka: Texture::constant(resolution, 3, &[0.0, 0.0, 0.0]),
            normal: Texture::constant(resolution, 3, &[0.0, 0.0, 1.0]),
            alpha: 0.5,
            diffuse_scale: [1.0, 1.0, 1.0],
        }
    }

    pub fn resolution(&self) -> usize {
        self.kd.resolution()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.kd.resolution();
        if self.ks.resolution() != r || self.ka.resolution() != r || self.normal.resolution() != r {
            return Err(Error::data("texture set resolutions differ"));
        }
        for (name, t) in [
            ("kd", &self.kd),
            ("ks", &self.ks),
            ("ka", &self.ka),
            ("normal", &self.normal),
        ] {
            if !t.is_finite() {
                return Err(Error::numerical(format!("{name} texture has non-finite texels")));
            }
        }
        for (name, t) in [("kd", &self.kd), ("ks", &self.ks), ("ka", &self.ka)] {
            if t.data.iter().any(|&v| v < 0.0) {
                return Err(Error::data(format!("{name} texture has negative texels")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::data(format!("alpha {} outside [0,1]", self.alpha)));
        }
        if self.diffuse_scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::data("diffuse_scale must be positive"));
        }
        Ok(())
    }

    pub fn upsample2x(&self) -> TextureSet {
        TextureSet {
            kd: self.kd.upsample2x(),
            ks: self.ks.upsample2x(),
            ka: self.ka.upsample2x(),
            normal: self.normal.upsample2x(),
            alpha: self.alpha,
            diffuse_scale: self.diffuse_scale,
        }
    }
}
