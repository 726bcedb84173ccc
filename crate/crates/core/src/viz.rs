//! Feature-map heatmaps: min-max normalization, bilinear upsampling and
//! binary PGM output.
//!
//! Upsampling uses half-pixel centers: output pixel `x` samples the source
//! at `(x + 0.5) * in / out - 0.5`, clamped to the source extent. Coloring
//! is left to the consumer; only grayscale intensity is produced here.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const DEFAULT_HEATMAP_SIZE: usize = 224;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    /// Row-major, `height * width` values.
    pub values: Vec<f64>,
    pub image_row: Option<usize>,
    pub feature_index: Option<usize>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions(format!("{height}x{width} feature map")));
        }
        if values.len() != height * width {
            return Err(Error::InvalidDimensions(format!(
                "{} values for a {height}x{width} map",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDimensions("non-finite feature map value".into()));
        }
        Ok(Self {
            height,
            width,
            values,
            image_row: None,
            feature_index: None,
        })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    fn with_values(&self, height: usize, width: usize, values: Vec<f64>) -> Self {
        Self {
            height,
            width,
            values,
            image_row: self.image_row,
            feature_index: self.feature_index,
        }
    }
}

/// `(v - min) / (max - min)`; a constant map becomes all zeros.
pub fn normalize(map: &FeatureMap) -> FeatureMap {
    let (lo, hi) = map.min_max();
    let span = hi - lo;
    let values = if span > 0.0 {
        map.values.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; map.values.len()]
    };
    map.with_values(map.height, map.width, values)
}

fn source_coord(out: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let s = ((out as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, s - i0 as f64)
}

pub fn upsample_bilinear(map: &FeatureMap, out_h: usize, out_w: usize) -> Result<FeatureMap> {
    if out_h < map.height || out_w < map.width {
        return Err(Error::InvalidDimensions(format!(
            "cannot upsample {}x{} to {out_h}x{out_w}",
            map.height, map.width
        )));
    }
    let cols: Vec<(usize, usize, f64)> = (0..out_w).map(|x| source_coord(x, map.width, out_w)).collect();
    let mut values = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = source_coord(y, map.height, out_h);
        for &(x0, x1, fx) in &cols {
            let top = map.at(y0, x0) + (map.at(y0, x1) - map.at(y0, x0)) * fx;
            let bottom = map.at(y1, x0) + (map.at(y1, x1) - map.at(y1, x0)) * fx;
            values.push(top + (bottom - top) * fy);
        }
    }
    Ok(map.with_values(out_h, out_w, values))
}

/// Normalize, then resize to the image resolution.
pub fn heatmap(map: &FeatureMap, out_h: usize, out_w: usize) -> Result<FeatureMap> {
    upsample_bilinear(&normalize(map), out_h, out_w)
}

/// Binary PGM (P5, maxval 255) with `round(v * 255)` per pixel.
pub fn encode_pgm(map: &FeatureMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend(map.values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(map: &FeatureMap, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(map)).map_err(|e| Error::io(path, e))
}

/// Parses a P5 image with maxval 255 into (width, height, pixels).
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::InvalidDimensions(format!("malformed PGM: {m}"));
    let mut fields = Vec::with_capacity(4);
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
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("expected P5 with maxval 255"));
    }
    let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let pixels = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
    if pixels.len() != width * height {
        return Err(bad("raster size"));
    }
    Ok((width, height, pixels.to_vec()))
}

/// `{dir}/f{feature}/i{row}.fmap`
pub fn fmap_path(dir: &Path, feature: usize, row: usize) -> PathBuf {
    dir.join(format!("f{feature}")).join(format!("i{row}.fmap"))
}

/// Encodes a map as two little-endian u32 (H, W) then H·W little-endian f32.
pub fn encode_fmap(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + map.values.len() * 4);
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    for &v in &map.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn read_fmap(path: &Path) -> Result<FeatureMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::FeatureMap {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 8 {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let height = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + height * width * 4;
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for {height}x{width}, found {}",
            bytes.len()
        )));
    }
    let values = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    FeatureMap::new(height, width, values).map_err(|e| bad(e.to_string()))
}
