//! Linear-radiance images, float I/O (PFM) and 8-bit PNG previews.
//!
//! Pixel layout is row-major with row 0 at the top, `data[(y*w + x)*c + ch]`.
//! Values are linear radiance / map values: finite, unbounded above.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Image {
        assert!(width >= 1 && height >= 1);
        assert!(channels == 1 || channels == 3);
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, ch: usize) -> f32 {
        self.data[self.idx(x, y) + ch]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, ch: usize, v: f32) {
        let i = self.idx(x, y) + ch;
        self.data[i] = v;
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rec. 709 luminance for 3-channel images; identity for single-channel.
    pub fn luminance(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.pixel_count());
        match self.channels {
            1 => out.extend(self.data.iter().map(|&v| v as f64)),
            3 => {
                for px in self.data.chunks_exact(3) {
                    out.push(0.2126 * px[0] as f64 + 0.7152 * px[1] as f64 + 0.0722 * px[2] as f64);
                }
            }
            _ => unreachable!(),
        }
        out
    }
}

/// Variance of the 3x3 Laplacian response (center 4, cross neighbors -1,
/// replicate border), computed on luminance. The usual focus metric.
pub fn sharpness(image: &Image) -> Result<f64> {
    if image.width < 3 || image.height < 3 {
        return Err(Error::data(format!(
            "sharpness needs at least a 3x3 image, got {}x{}",
            image.width, image.height
        )));
    }
    let lum = image.luminance();
    let (w, h) = (image.width, image.height);
    let at = |x: i64, y: i64| -> f64 {
        let xc = x.clamp(0, w as i64 - 1) as usize;
        let yc = y.clamp(0, h as i64 - 1) as usize;
        lum[yc * w + xc]
    };
    let n = (w * h) as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let r = 4.0 * at(x, y) - at(x - 1, y) - at(x + 1, y) - at(x, y - 1) - at(x, y + 1);
            sum += r;
            sum_sq += r * r;
        }
    }
    let mean = sum / n;
    Ok(sum_sq / n - mean * mean)
}

/// One index per consecutive window of `window` frames (the last window may
/// be short): the sharpest frame, ties broken toward the lowest index.
pub fn select_sharpest(frames: &[Image], window: usize) -> Result<Vec<usize>> {
    assert!(window >= 1);
    if frames.is_empty() {
        return Err(Error::data("select_sharpest: empty frame list"));
    }
    let scores: Result<Vec<f64>> = frames.iter().map(sharpness).collect();
    let scores = scores?;
    let mut selected = Vec::new();
    let mut start = 0;
    while start < frames.len() {
        let end = (start + window).min(frames.len());
        let mut best = start;
        for i in start + 1..end {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        selected.push(best);
        start = end;
    }
    Ok(selected)
}

// ---------------------------------------------------------------------------
// PFM (portable float map): "PF" = RGB, "Pf" = grayscale, scale -1.0 marks
// little-endian, raster stored bottom row first.
// ---------------------------------------------------------------------------

pub fn write_pfm(path: &Path, image: &Image) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let magic = if image.channels == 3 { "PF" } else { "Pf" };
    write!(w, "{}\n{} {}\n-1.0\n", magic, image.width, image.height)
        .map_err(|e| Error::io(path, e))?;
    let row_len = image.width * image.channels;
    for y in (0..image.height).rev() {
        let row = &image.data[y * row_len..(y + 1) * row_len];
        let mut bytes = Vec::with_capacity(row_len * 4);
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut contents = Vec::new();
    r.read_to_end(&mut contents).map_err(|e| Error::io(path, e))?;

    // Header is three whitespace-separated tokens after the magic.
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < contents.len() && contents[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < contents.len() && !contents[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, "truncated PFM header"));
        }
        // consume the single whitespace byte that terminates the token
        pos += 1;
        Ok(String::from_utf8_lossy(&contents[start..pos - 1]).into_owned())
    };

    let magic = token()?;
    let channels = match magic.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::parse(path, format!("not a PFM file (magic {other:?})"))),
    };
    let width: usize = token()?
        .parse()
        .map_err(|_| Error::parse(path, "bad PFM width"))?;
    let height: usize = token()?
        .parse()
        .map_err(|_| Error::parse(path, "bad PFM height"))?;
    let scale: f64 = token()?
        .parse()
        .map_err(|_| Error::parse(path, "bad PFM scale"))?;
    if width == 0 || height == 0 {
        return Err(Error::parse(path, "zero PFM dimensions"));
    }
    let little_endian = scale < 0.0;
    let payload = &contents[pos..];
    let expected = width * height * channels * 4;
    if payload.len() < expected {
        return Err(Error::parse(
            path,
            format!("PFM payload too short: {} < {}", payload.len(), expected),
        ));
    }

    let mut image = Image::new(width, height, channels);
    let row_len = width * channels;
    for file_row in 0..height {
        let y = height - 1 - file_row; // bottom row first
        for i in 0..row_len {
            let off = (file_row * row_len + i) * 4;
            let raw: [u8; 4] = payload[off..off + 4].try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            image.data[y * row_len + i] = v;
        }
    }
    if !image.is_finite() {
        return Err(Error::parse(path, "PFM contains non-finite values"));
    }
    Ok(image)
}

// ---------------------------------------------------------------------------
// PNG previews: clamp to [0,1], apply the sRGB transfer curve, 8-bit encode.
// A minimal self-contained encoder (stored deflate blocks) keeps previews
// dependency-free; they are diagnostics, not a data path.
// ---------------------------------------------------------------------------

fn srgb_encode(v: f32) -> u8 {
    let c = v.clamp(0.0, 1.0) as f64;
    let s = if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    };
    (s * 255.0).round().clamp(0.0, 255.0) as u8
}

fn crc32(bytes: &[u8]) -> u32 {
    let mut crc: u32 = 0xffff_ffff;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xedb8_8320 & mask);
        }
    }
    !crc
}

fn adler32(bytes: &[u8]) -> u32 {
    const MOD: u32 = 65521;
    let (mut a, mut b) = (1u32, 0u32);
    for &byte in bytes {
        a = (a + byte as u32) % MOD;
        b = (b + a) % MOD;
    }
    (b << 16) | a
}

fn png_chunk(out: &mut Vec<u8>, kind: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    let mut body = Vec::with_capacity(4 + payload.len());
    body.extend_from_slice(kind);
    body.extend_from_slice(payload);
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32(&body).to_be_bytes());
}

pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let color_type: u8 = if image.channels == 3 { 2 } else { 0 };

    // Filter byte 0 before each scanline.
    let mut raw = Vec::with_capacity(image.height * (1 + image.width * image.channels));
    for y in 0..image.height {
        raw.push(0u8);
        for x in 0..image.width {
            for c in 0..image.channels {
                raw.push(srgb_encode(image.get(x, y, c)));
            }
        }
    }

    // zlib wrapper around stored (uncompressed) deflate blocks.
    let mut z = vec![0x78, 0x01];
    let mut off = 0;
    while off < raw.len() {
        let len = (raw.len() - off).min(65535);
        let last = off + len == raw.len();
        z.push(if last { 1 } else { 0 });
        z.extend_from_slice(&(len as u16).to_le_bytes());
        z.extend_from_slice(&(!(len as u16)).to_le_bytes());
        z.extend_from_slice(&raw[off..off + len]);
        off += len;
    }
    z.extend_from_slice(&adler32(&raw).to_be_bytes());

    let mut ihdr = Vec::with_capacity(13);
    ihdr.extend_from_slice(&(image.width as u32).to_be_bytes());
    ihdr.extend_from_slice(&(image.height as u32).to_be_bytes());
    ihdr.extend_from_slice(&[8, color_type, 0, 0, 0]);

    let mut out = Vec::new();
    out.extend_from_slice(&[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a]);
    png_chunk(&mut out, b"IHDR", &ihdr);
    png_chunk(&mut out, b"IDAT", &z);
    png_chunk(&mut out, b"IEND", &[]);

    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
