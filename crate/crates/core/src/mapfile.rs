//! Congestion map files and static exports.
//!
//! A `.f32` map is the 8-byte magic `VACAMAP1`, `u32` rows, `u32` cols, then
//! `rows * cols` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::circuit::GridMap;

pub const MAP_MAGIC: &[u8; 8] = b"VACAMAP1";

#[derive(Debug, Error)]
pub enum MapError {
    #[error("map file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub fn encode_map(map: &GridMap) -> Result<Vec<u8>, MapError> {
    if map.values.len() != map.rows * map.cols {
        return Err(MapError::Format(format!(
            "{} values for a {}x{} map",
            map.values.len(),
            map.rows,
            map.cols
        )));
    }
    let dim = |v: usize| u32::try_from(v).map_err(|_| MapError::Format(format!("dimension {v} too large")));
    let mut out = Vec::with_capacity(16 + 4 * map.values.len());
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&dim(map.rows)?.to_le_bytes());
    out.extend_from_slice(&dim(map.cols)?.to_le_bytes());
    for &v in &map.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_map(bytes: &[u8]) -> Result<GridMap, MapError> {
    if bytes.len() < 16 || &bytes[..8] != MAP_MAGIC {
        return Err(MapError::Format("missing VACAMAP1 header".into()));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if rows.checked_mul(cols).and_then(|n| n.checked_mul(4)) != Some(body.len()) {
        return Err(MapError::Format(format!(
            "header says {rows}x{cols}, body has {} bytes",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(GridMap { rows, cols, values })
}

pub fn write_map(path: &Path, map: &GridMap) -> Result<(), MapError> {
    fs::write(path, encode_map(map)?)?;
    Ok(())
}

pub fn read_map(path: &Path) -> Result<GridMap, MapError> {
    decode_map(&fs::read(path)?)
}

/// Min-max normalized 8-bit intensities, row 0 at the top; a constant map
/// is all zeros.
pub fn grayscale(map: &GridMap) -> Vec<u8> {
    let lo = map.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    map.values
        .iter()
        .map(|&v| {
            if span > 0.0 && span.is_finite() {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn write_png(path: &Path, map: &GridMap) -> Result<(), MapError> {
    let (w, h) = (map.cols as u32, map.rows as u32);
    let img = image::GrayImage::from_raw(w, h, grayscale(map))
        .ok_or_else(|| MapError::Format(format!("cannot build a {}x{} image", map.rows, map.cols)))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// One line per row, comma-separated.
pub fn to_csv(map: &GridMap) -> String {
    let mut out = String::new();
    for row in map.values.chunks(map.cols.max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, map: &GridMap) -> Result<(), MapError> {
    fs::write(path, to_csv(map))?;
    Ok(())
}
