//! Dense image planes used throughout the pipeline.
//!
//! All planes are row-major with the origin at the top-left pixel; pixel
//! `(col, row)` is sampled at continuous coordinates `(col + 0.5, row + 0.5)`.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// H×W RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

/// H×W scalar plane (depth, alpha, luminance).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// H×W camera-frame depth.
pub type DepthMap = ScalarMap;

/// H×W boolean mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

/// H×W×dim feature map, stored pixel-major (`data[(row * width + col) * dim + k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![rgb; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> [f64; 3] {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, rgb: [f64; 3]) {
        self.data[row * self.width + col] = rgb;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Sum of squared channel differences.
    pub fn sq_error(&self, other: &Image) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::invalid(format!(
                "image shape mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>())
            .sum())
    }

    /// Mean squared error over all channels.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        let n = (self.len() * 3).max(1) as f64;
        Ok(self.sq_error(other)? / n)
    }

    /// Peak signal-to-noise ratio in dB for a peak value of 1.
    pub fn psnr(&self, other: &Image) -> Result<f64> {
        let mse = self.mse(other)?;
        Ok(if mse <= 0.0 {
            f64::INFINITY
        } else {
            -10.0 * mse.log10()
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Element-wise product with a mask (pixels outside the mask become black).
    pub fn masked(&self, mask: &Mask) -> Image {
        let data = self
            .data
            .iter()
            .zip(&mask.data)
            .map(|(p, &m)| if m { *p } else { [0.0; 3] })
            .collect();
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Per-channel luminance (Rec. 601 weights).
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for (i, px) in out.pixels_mut().enumerate() {
            let p = self.data[i];
            *px = image::Rgb([quantize(p[0]), quantize(p[1]), quantize(p[2])]);
        }
        out
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img
            .pixels()
            .map(|p| {
                [
                    f64::from(p.0[0]) / 255.0,
                    f64::from(p.0[1]) / 255.0,
                    f64::from(p.0[2]) / 255.0,
                ]
            })
            .collect();
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    /// Little-endian colour PFM.
    pub fn write_pfm(&self, out: impl Write) -> Result<()> {
        let flat: Vec<f64> = self.data.iter().flat_map(|p| p.iter().copied()).collect();
        write_pfm(out, self.width, self.height, 3, &flat)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl ScalarMap {
    pub fn filled(width: usize, height: usize, z: f64) -> Self {
        Self {
            width,
            height,
            data: vec![z; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Affinely maps the map's range onto `[near, far]` (minimum to `near`).
    /// A constant map collapses to the midpoint.
    pub fn normalize_to_range(&self, near: f64, far: f64) -> ScalarMap {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let data = if !(hi > lo) {
            vec![0.5 * (near + far); self.data.len()]
        } else {
            self.data
                .iter()
                .map(|&v| near + (v - lo) / (hi - lo) * (far - near))
                .collect()
        };
        ScalarMap {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn write_pfm(&self, out: impl Write) -> Result<()> {
        write_pfm(out, self.width, self.height, 1, &self.data)
    }
}

impl Mask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&m| m)
    }

    pub fn not(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|m| !m).collect(),
        }
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

impl FeatureMap {
    pub fn zeros(width: usize, height: usize, dim: usize) -> Self {
        Self {
            width,
            height,
            dim,
            data: vec![0.0; width * height * dim],
        }
    }

    #[inline]
    pub fn pixel(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }

    #[inline]
    pub fn pixel_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.data[idx * self.dim..(idx + 1) * self.dim]
    }
}

/// Writes a little-endian PFM (`Pf` grayscale or `PF` colour). Rows are stored
/// bottom-to-top as the format requires.
pub fn write_pfm(
    mut out: impl Write,
    width: usize,
    height: usize,
    channels: usize,
    data: &[f64],
) -> Result<()> {
    let tag = match channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::invalid(format!("PFM supports 1 or 3 channels, got {c}"))),
    };
    if data.len() != width * height * channels {
        return Err(Error::invalid("PFM data length does not match shape"));
    }
    write!(out, "{tag}\n{width} {height}\n-1.0\n")?;
    let stride = width * channels;
    for row in (0..height).rev() {
        for &v in &data[row * stride..(row + 1) * stride] {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a PFM written by [`write_pfm`] (either endianness), returning
/// `(width, height, channels, data)` in top-to-bottom row order.
pub fn read_pfm(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PFM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::Format("PFM header".into()))?);
    }
    pos += 1;
    let channels = match fields[0] {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::Format(format!("bad PFM tag {other}"))),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format("PFM size".into()));
    let (width, height) = (parse(fields[1])?, parse(fields[2])?);
    let scale: f64 = fields[3].parse().map_err(|_| Error::Format("PFM scale".into()))?;
    let little = scale < 0.0;
    let n = width * height * channels;
    let body = bytes.get(pos..pos + 4 * n).ok_or_else(|| Error::Format("truncated PFM body".into()))?;
    let mut data = vec![0.0; n];
    let stride = width * channels;
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (file_row, off) = (i / stride, i % stride);
        data[(height - 1 - file_row) * stride + off] = f64::from(v);
    }
    Ok((width, height, channels, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let a = Image::filled(4, 4, [0.2, 0.3, 0.4]);
        assert!(a.psnr(&a).unwrap().is_infinite());
    }

    #[test]
    fn psnr_known_value() {
        let a = Image::filled(2, 2, [0.0; 3]);
        let b = Image::filled(2, 2, [0.1; 3]);
        assert!((a.psnr(&b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn pfm_round_trip_preserves_f32_values() {
        let img = Image::from_fn(3, 2, |c, r| [c as f64 * 0.25, r as f64 * 0.5, 0.125]);
        let mut buf = Vec::new();
        img.write_pfm(&mut buf).unwrap();
        let (w, h, ch, data) = read_pfm(&buf).unwrap();
        assert_eq!((w, h, ch), (3, 2, 3));
        let flat: Vec<f64> = img.data.iter().flat_map(|p| p.iter().copied()).collect();
        assert_eq!(data, flat);
    }

    #[test]
    fn range_normalization_maps_extremes() {
        let d = DepthMap::from_fn(3, 1, |c, _| c as f64);
        let n = d.normalize_to_range(0.5, 10.0);
        assert_eq!(n.data, vec![0.5, 5.25, 10.0]);
    }

    #[test]
    fn mask_iou() {
        let a = Mask::from_fn(4, 1, |c, _| c < 2);
        let b = Mask::from_fn(4, 1, |c, _| c < 3);
        assert!((a.iou(&b) - 2.0 / 3.0).abs() < 1e-12);
    }
}
