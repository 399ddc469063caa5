//! Raw float32 volumes with a JSON header, sliced into 2D PNGs.
//!
//! A volume `<name>` is stored as `<name>.raw` (little-endian f32, C order
//! `D×H×W`) next to `<name>.json` holding `{"dtype":"float32","shape":[D,H,W]}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{min_max_normalize, save_gray_png16};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dtype: String,
    pub shape: [usize; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub shape: [usize; 3],
    pub data: Vec<f32>,
}

impl Volume {
    pub fn new(shape: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let expected = shape.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::VolumeSize {
                expected: expected * 4,
                actual: data.len() * 4,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn at(&self, d: usize, h: usize, w: usize) -> f32 {
        self.data[(d * self.shape[1] + h) * self.shape[2] + w]
    }

    /// Reads `<stem>.raw` and `<stem>.json`; `path` may name either file or the bare stem.
    pub fn read(path: &Path) -> Result<Self> {
        let raw = path.with_extension("raw");
        let header_path = path.with_extension("json");
        let header_text = fs::read_to_string(&header_path).map_err(|e| Error::Unreadable {
            path: header_path.clone(),
            reason: e.to_string(),
        })?;
        let header: VolumeHeader =
            serde_json::from_str(&header_text).map_err(|e| Error::VolumeHeader(e.to_string()))?;
        if header.dtype != "float32" {
            return Err(Error::VolumeHeader(format!("unsupported dtype {:?}", header.dtype)));
        }
        let bytes = fs::read(&raw).map_err(|e| Error::Unreadable {
            path: raw.clone(),
            reason: e.to_string(),
        })?;
        let expected = header.shape.iter().product::<usize>() * 4;
        if bytes.len() != expected {
            return Err(Error::VolumeSize {
                expected,
                actual: bytes.len(),
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Self {
            shape: header.shape,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header = VolumeHeader {
            dtype: "float32".into(),
            shape: self.shape,
        };
        fs::write(path.with_extension("json"), serde_json::to_vec(&header)?)?;
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path.with_extension("raw"), bytes)?;
        Ok(())
    }

    /// Extracts slice `index` along `axis`. Rows run along the first remaining
    /// axis and columns along the second, so axis 1 yields `volume[:, index, :]`
    /// as a `D×W` image. Returns `(rows, cols, values)`.
    pub fn slice(&self, axis: usize, index: usize) -> Result<(usize, usize, Vec<f32>)> {
        let [d, h, w] = self.shape;
        let (rows, cols) = match axis {
            0 => (h, w),
            1 => (d, w),
            2 => (d, h),
            _ => return Err(Error::config("axis", format!("must be 0, 1 or 2, got {axis}"))),
        };
        if index >= self.shape[axis] {
            return Err(Error::Shape(format!("slice {index} out of range for axis {axis}")));
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                out.push(match axis {
                    0 => self.at(index, r, c),
                    1 => self.at(r, index, c),
                    _ => self.at(r, c, index),
                });
            }
        }
        Ok((rows, cols, out))
    }
}

/// Writes one 16-bit PNG per index along `axis`, named `<stem>_<index>.png`
/// with the index zero-padded to a common width.
///
/// With `normalize`, each slice is min-max scaled on its own (constant slices
/// become all zeros); otherwise values are clamped to `[0, 1]`, which suits
/// mask volumes.
pub fn slice_volume(path: &Path, axis: usize, out_dir: &Path, normalize: bool) -> Result<Vec<PathBuf>> {
    let vol = Volume::read(path)?;
    if axis > 2 {
        return Err(Error::config("axis", format!("must be 0, 1 or 2, got {axis}")));
    }
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("slice")
        .to_string();
    fs::create_dir_all(out_dir)?;
    let count = vol.shape[axis];
    let pad = count.saturating_sub(1).to_string().len().max(3);
    let mut written = Vec::with_capacity(count);
    for i in 0..count {
        let (rows, cols, mut values) = vol.slice(axis, i)?;
        if normalize {
            min_max_normalize(&mut values);
        }
        let file = out_dir.join(format!("{stem}_{i:0pad$}.png"));
        save_gray_png16(&file, cols, rows, &values)?;
        written.push(file);
    }
    Ok(written)
}
