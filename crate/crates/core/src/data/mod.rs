//! Datasets: loading, slicing, splitting and synthesis.

mod io;
mod split;
mod synth;
mod volume;

pub use io::{load_gray_png, load_image_mask_dir, save_gray_png, save_gray_png16};
pub use split::{assign_views, make_split, DatasetSplit, LabeledViewAssignment, SplitManifest};
pub use synth::{generate_synthetic_dataset, rasterize_ellipses, Ellipse, ShapeParams, SynthConfig, SyntheticDataset};
pub use volume::{slice_volume, Volume, VolumeHeader};

use crate::error::{Error, Result};
use crate::tensor::{ImageBatch, MapBatch};

/// A `C×H×W` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "image {channels}×{height}×{width} with {} values",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::Shape(format!("image value {v} outside [0, 1]")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// A binary `H×W` mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskTensor {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl MaskTensor {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!("mask {height}×{width} with {} values", data.len())));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Shape("mask values must be 0 or 1".into()));
        }
        Ok(Self { height, width, data })
    }

    /// Binarizes a probability map: `p ≥ 0.5` becomes foreground.
    pub fn from_probs(height: usize, width: usize, probs: &[f32]) -> Result<Self> {
        Self::new(height, width, probs.iter().map(|&p| u8::from(p >= 0.5)).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn foreground(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.foreground() as f64 / self.data.len().max(1) as f64
    }
}

/// An image with its ground-truth mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub image: ImageTensor,
    pub mask: MaskTensor,
}

impl Sample {
    pub fn new(id: usize, image: ImageTensor, mask: MaskTensor) -> Result<Self> {
        if (image.height, image.width) != (mask.height, mask.width) {
            return Err(Error::Shape(format!(
                "sample {id}: image {}×{} vs mask {}×{}",
                image.height, image.width, mask.height, mask.width
            )));
        }
        Ok(Self { id, image, mask })
    }
}

/// A training image whose mask is withheld.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSample {
    pub id: usize,
    pub image: ImageTensor,
}

/// Stacks images of equal shape into a batch.
pub fn image_batch<'a>(images: impl IntoIterator<Item = &'a ImageTensor>) -> Result<ImageBatch<f32>> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut shape = None;
    for img in images {
        let s = (img.channels, img.height, img.width);
        if *shape.get_or_insert(s) != s {
            return Err(Error::Shape("images in a batch differ in shape".into()));
        }
        data.extend_from_slice(&img.data);
        n += 1;
    }
    let (c, h, w) = shape.unwrap_or((1, 0, 0));
    ImageBatch::new(n, c, h, w, data)
}

/// Stacks masks of equal shape into a `{0, 1}`-valued map batch.
pub fn mask_batch<'a>(masks: impl IntoIterator<Item = &'a MaskTensor>) -> Result<MapBatch<f32>> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut shape = None;
    for m in masks {
        let s = (m.height, m.width);
        if *shape.get_or_insert(s) != s {
            return Err(Error::Shape("masks in a batch differ in shape".into()));
        }
        data.extend(m.data.iter().map(|&v| v as f32));
        n += 1;
    }
    let (h, w) = shape.unwrap_or((0, 0));
    MapBatch::new(n, h, w, data)
}

/// Min-max scales values to `[0, 1]`; a constant input maps to all zeros.
pub fn min_max_normalize(values: &mut [f32]) {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0 && range.is_finite()) {
        values.fill(0.0);
        return;
    }
    for v in values.iter_mut() {
        *v = ((*v - lo) / range).clamp(0.0, 1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_normalizes_to_zero() {
        let mut v = vec![3.5f32; 6];
        min_max_normalize(&mut v);
        assert!(v.iter().all(|&x| x == 0.0));
        let mut r = vec![2.0f32, 4.0, 3.0];
        min_max_normalize(&mut r);
        assert_eq!(r, vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(MaskTensor::new(1, 2, vec![0, 2]).is_err());
        let m = MaskTensor::from_probs(1, 3, &[0.2, 0.5, 0.7]).unwrap();
        assert_eq!(m.data(), &[0, 1, 1]);
    }

    #[test]
    fn sample_requires_matching_shapes() {
        let img = ImageTensor::new(1, 2, 2, vec![0.0; 4]).unwrap();
        let mask = MaskTensor::new(2, 3, vec![0; 6]).unwrap();
        assert!(Sample::new(0, img, mask).is_err());
    }
}
