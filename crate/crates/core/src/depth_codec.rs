//! Logarithmic 8-bit depth encoding.
//!
//! Metric depth in `[d_min, d_max]` is mapped onto a `u8` code with
//! `y = ln(a·(d − 1) + 0.01)/a + c`, which gives a quantization step that
//! grows linearly with depth (`a·(d − 1) + 0.01` meters per code). Near
//! geometry keeps centimeter resolution while far geometry is coarse.
//!
//! Encoded maps are plain single-channel images so they can ride in a PNG or
//! JPEG container next to the RGB frame.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::{GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Marker stored in a [`DepthMap`] for pixels without a usable depth.
pub const INVALID_DEPTH: f32 = f32::INFINITY;

/// Code written for invalid depths. Treated as "far".
pub const SENTINEL_CODE: u8 = 255;

#[inline]
pub fn is_valid_depth(d: f32) -> bool {
    d.is_finite() && d > 0.0
}

/// What happens to depths beyond `d_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowMode {
    /// Clamp to code 255.
    #[default]
    Saturate,
    /// Wrap modulo 256 like an unchecked `uint8` cast. Far geometry folds
    /// back toward the camera; only useful to study that artifact.
    Wrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecParams {
    pub a: f64,
    pub c: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub overflow_mode: OverflowMode,
}

impl Default for CodecParams {
    fn default() -> Self {
        Self {
            a: 0.0126194,
            c: 364.92737,
            d_min: 1.0,
            d_max: 20.0,
            overflow_mode: OverflowMode::Saturate,
        }
    }
}

impl CodecParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) || !self.a.is_finite() || !self.c.is_finite() {
            return invalid(format!("codec slope must be positive and finite, got a={}", self.a));
        }
        if !(self.d_min < self.d_max) || !(self.d_min > 0.0) {
            return invalid(format!(
                "codec range must satisfy 0 < d_min < d_max, got [{}, {}]",
                self.d_min, self.d_max
            ));
        }
        Ok(())
    }

    /// Unrounded code value for depth `d`.
    #[inline]
    pub fn code_value(&self, d: f64) -> f64 {
        (self.a * (d - 1.0) + 0.01).ln() / self.a + self.c
    }
}

/// Encodes one metric depth.
///
/// Depths below `d_min` clamp to code 0. Depths above `d_max` saturate to 255
/// unless [`OverflowMode::Wrap`] is selected.
pub fn encode_depth(d: f64, p: &CodecParams) -> Result<u8> {
    if !d.is_finite() || d <= 0.0 {
        return invalid(format!("depth must be finite and positive, got {d}"));
    }
    if d < p.d_min {
        return Ok(0);
    }
    // round() is half-away-from-zero
    let y = p.code_value(d).round();
    let code = match p.overflow_mode {
        OverflowMode::Saturate => y.clamp(0.0, 255.0) as u8,
        OverflowMode::Wrap if y > 255.0 => (y as i64).rem_euclid(256) as u8,
        OverflowMode::Wrap => y.max(0.0) as u8,
    };
    Ok(code)
}

pub fn decode_depth(code: u8, p: &CodecParams) -> f64 {
    1.0 + ((p.a * (f64::from(code) - p.c)).exp() - 0.01) / p.a
}

/// Metric depth covered by one code unit at depth `d`.
pub fn quantization_step(d: f64, p: &CodecParams) -> Result<f64> {
    if !(d >= p.d_min && d <= p.d_max) {
        return invalid(format!("depth {d} outside codec range [{}, {}]", p.d_min, p.d_max));
    }
    Ok(p.a * (d - 1.0) + 0.01)
}

/// Horizontal and vertical field of view, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fov {
    pub horizontal: f64,
    pub vertical: f64,
}

impl Fov {
    pub fn new(horizontal: f64, vertical: f64) -> Result<Self> {
        let ok = |f: f64| f.is_finite() && f > 0.0 && f < std::f64::consts::PI;
        if !ok(horizontal) || !ok(vertical) {
            return invalid(format!(
                "field of view must lie in (0, pi), got ({horizontal}, {vertical})"
            ));
        }
        Ok(Self { horizontal, vertical })
    }

    pub fn from_degrees(horizontal: f64, vertical: f64) -> Result<Self> {
        Self::new(horizontal.to_radians(), vertical.to_radians())
    }
}

/// Row-major metric depth along the optical axis, one value per RGB pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
    fov: Option<Fov>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return invalid(format!(
                "depth buffer holds {} values, expected {}x{}",
                data.len(),
                width,
                height
            ));
        }
        if let Some(bad) = data.iter().find(|d| d.is_finite() && **d <= 0.0) {
            return invalid(format!("finite depths must be positive, found {bad}"));
        }
        if data.iter().any(|d| d.is_nan()) {
            return invalid("depth buffer contains NaN");
        }
        Ok(Self {
            width,
            height,
            data,
            fov: None,
        })
    }

    pub fn filled(width: usize, height: usize, depth: f32) -> Result<Self> {
        Self::new(width, height, vec![depth; width * height])
    }

    pub fn with_fov(mut self, fov: Fov) -> Self {
        self.fov = Some(fov);
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn fov(&self) -> Option<Fov> {
        self.fov
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.data.iter().map(|d| is_valid_depth(*d)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDepthMap {
    pub width: usize,
    pub height: usize,
    pub codes: Vec<u8>,
}

impl EncodedDepthMap {
    pub fn new(width: usize, height: usize, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != width * height {
            return invalid(format!(
                "code buffer holds {} values, expected {}x{}",
                codes.len(),
                width,
                height
            ));
        }
        Ok(Self { width, height, codes })
    }

    fn to_gray(&self) -> Result<GrayImage> {
        GrayImage::from_raw(self.width as u32, self.height as u32, self.codes.clone())
            .ok_or_else(|| Error::InvalidInput("code buffer does not match dimensions".into()))
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_gray()?.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn to_jpeg(&self, quality: u8) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        JpegEncoder::new_with_quality(&mut out, quality).encode_image(&self.to_gray()?)?;
        Ok(out)
    }

    /// Decodes any supported single- or multi-channel container; color
    /// containers are reduced to luma.
    pub fn from_container(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.into_luma8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    pub fn code_at(&self, col: usize, row: usize) -> u8 {
        self.codes[row * self.width + col]
    }
}

pub fn encode_map(dm: &DepthMap, p: &CodecParams) -> Result<EncodedDepthMap> {
    if dm.width == 0 || dm.height == 0 {
        return invalid("cannot encode an empty depth map");
    }
    let codes = dm
        .data
        .iter()
        .map(|&d| {
            if is_valid_depth(d) {
                encode_depth(f64::from(d), p)
            } else {
                Ok(SENTINEL_CODE)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    EncodedDepthMap::new(dm.width, dm.height, codes)
}

/// Decodes every code to meters. The result carries no field of view; attach
/// one with [`DepthMap::with_fov`].
pub fn decode_map(e: &EncodedDepthMap, p: &CodecParams) -> DepthMap {
    let lut = decode_table(p);
    DepthMap {
        width: e.width,
        height: e.height,
        data: e.codes.iter().map(|&c| lut[c as usize]).collect(),
        fov: None,
    }
}

/// Like [`decode_map`] but restores [`INVALID_DEPTH`] where `valid` is false.
pub fn decode_map_masked(e: &EncodedDepthMap, p: &CodecParams, valid: &[bool]) -> Result<DepthMap> {
    if valid.len() != e.codes.len() {
        return invalid("validity mask does not match encoded map");
    }
    let mut dm = decode_map(e, p);
    for (d, ok) in dm.data.iter_mut().zip(valid) {
        if !ok {
            *d = INVALID_DEPTH;
        }
    }
    Ok(dm)
}

fn decode_table(p: &CodecParams) -> [f32; 256] {
    let mut lut = [0f32; 256];
    for (code, slot) in lut.iter_mut().enumerate() {
        *slot = decode_depth(code as u8, p) as f32;
    }
    lut
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub byte_depth: u32,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub fps: f64,
}

impl StreamSpec {
    pub fn rgb8(width: u32, height: u32, fps: f64) -> Self {
        Self {
            byte_depth: 1,
            height,
            width,
            channels: 3,
            fps,
        }
    }

    pub fn depth_f32(width: u32, height: u32, fps: f64) -> Self {
        Self {
            byte_depth: 4,
            height,
            width,
            channels: 1,
            fps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Bandwidth {
    pub bytes_per_second: f64,
}

impl Bandwidth {
    pub fn from_frame_bytes(bytes_per_frame: f64, fps: f64) -> Self {
        Self {
            bytes_per_second: bytes_per_frame * fps,
        }
    }

    /// Megabytes per second, 10⁶ bytes.
    pub fn mb_per_s(&self) -> f64 {
        self.bytes_per_second / 1e6
    }

    /// Mebibytes per second, 2²⁰ bytes.
    pub fn mib_per_s(&self) -> f64 {
        self.bytes_per_second / (1u64 << 20) as f64
    }
}

impl std::ops::Add for Bandwidth {
    type Output = Bandwidth;

    fn add(self, rhs: Self) -> Self {
        Bandwidth {
            bytes_per_second: self.bytes_per_second + rhs.bytes_per_second,
        }
    }
}

/// Raw (uncompressed) bandwidth of a stream.
pub fn bandwidth_estimate(s: &StreamSpec) -> Bandwidth {
    let frame = f64::from(s.byte_depth) * f64::from(s.height) * f64::from(s.width) * f64::from(s.channels);
    Bandwidth::from_frame_bytes(frame, s.fps.max(0.0))
}

/// Writes a one-value-per-line `key = value` listing of codec parameters.
pub fn params_to_text(p: &CodecParams) -> String {
    toml::to_string(p).expect("codec params serialize")
}

pub fn params_from_text(text: &str) -> Result<CodecParams> {
    let p: CodecParams = toml::from_str(text).map_err(|e| Error::Config(format!("codec params: {e}")))?;
    p.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> CodecParams {
        CodecParams::default()
    }

    #[test]
    fn endpoints() {
        assert_eq!(encode_depth(1.0, &p()).unwrap(), 0);
        assert_eq!(encode_depth(20.0, &p()).unwrap(), 255);
        assert_eq!(encode_depth(50.0, &p()).unwrap(), 255);
        assert!((decode_depth(0, &p()) - 1.0).abs() < 1e-3);
        assert!((decode_depth(255, &p()) - 20.0).abs() < 1e-2);
    }

    #[test]
    fn rejects_bad_depths() {
        assert!(encode_depth(0.0, &p()).is_err());
        assert!(encode_depth(-1.0, &p()).is_err());
        assert!(encode_depth(f64::NAN, &p()).is_err());
        assert!(encode_depth(f64::INFINITY, &p()).is_err());
    }

    #[test]
    fn below_range_clamps_to_zero() {
        assert_eq!(encode_depth(0.5, &p()).unwrap(), 0);
        assert_eq!(encode_depth(0.1, &p()).unwrap(), 0);
    }

    #[test]
    fn wrap_mode_folds_far_depths() {
        let wrap = CodecParams {
            overflow_mode: OverflowMode::Wrap,
            ..p()
        };
        let y = wrap.code_value(40.0).round() as i64;
        assert!(y > 255);
        assert_eq!(encode_depth(40.0, &wrap).unwrap() as i64, y - 256);
        assert_eq!(encode_depth(20.0, &wrap).unwrap(), 255);
    }

    #[test]
    fn quantization_step_values() {
        assert!((quantization_step(1.0, &p()).unwrap() - 0.01).abs() < 1e-12);
        let far = quantization_step(20.0, &p()).unwrap();
        assert!((far - (0.0126194 * 19.0 + 0.01)).abs() < 1e-12);
        assert!((far - 0.25).abs() < 0.005);
        assert!(quantization_step(0.5, &p()).is_err());
        assert!(quantization_step(21.0, &p()).is_err());
    }

    #[test]
    fn map_encoding() {
        let dm = DepthMap::filled(4, 3, 1.0).unwrap();
        let e = encode_map(&dm, &p()).unwrap();
        assert!(e.codes.iter().all(|&c| c == 0));

        let empty = DepthMap::new(0, 0, vec![]).unwrap();
        assert!(encode_map(&empty, &p()).is_err());

        let e = EncodedDepthMap::new(2, 2, vec![255; 4]).unwrap();
        let d = decode_map(&e, &p());
        assert!(d.data().iter().all(|&x| (x - 20.0).abs() < 1e-2));

        let one = EncodedDepthMap::new(1, 1, vec![0]).unwrap();
        assert!((decode_map(&one, &p()).get(0, 0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn sentinel_encodes_far_and_mask_restores_it() {
        let dm = DepthMap::new(2, 1, vec![2.0, INVALID_DEPTH]).unwrap();
        let e = encode_map(&dm, &p()).unwrap();
        assert_eq!(e.codes[1], SENTINEL_CODE);
        let back = decode_map_masked(&e, &p(), &dm.valid_mask()).unwrap();
        assert!(!is_valid_depth(back.get(1, 0)));
        assert!((back.get(0, 0) - 2.0).abs() < 0.03);
    }

    #[test]
    fn png_container_is_lossless() {
        let e = EncodedDepthMap::new(3, 2, vec![0, 10, 20, 128, 200, 255]).unwrap();
        let png = e.to_png().unwrap();
        assert_eq!(EncodedDepthMap::from_container(&png).unwrap(), e);
    }

    #[test]
    fn bandwidth_table_rows() {
        let rgb = bandwidth_estimate(&StreamSpec::rgb8(672, 376, 30.0));
        let depth = bandwidth_estimate(&StreamSpec::depth_f32(672, 376, 30.0));
        assert_eq!(rgb.bytes_per_second, 22_740_480.0);
        assert_eq!(depth.bytes_per_second, 30_320_640.0);
        assert_eq!(rgb.mib_per_s().round(), 22.0);
        assert_eq!(depth.mib_per_s().round(), 29.0);
        assert_eq!((rgb + depth).mib_per_s().round(), 51.0);
        let zero = bandwidth_estimate(&StreamSpec::rgb8(672, 376, 0.0));
        assert_eq!(zero.bytes_per_second, 0.0);
    }

    #[test]
    fn params_text_round_trip() {
        let text = params_to_text(&p());
        assert_eq!(params_from_text(&text).unwrap(), p());
        assert!(params_from_text("a = -1.0").is_err());
    }
}
