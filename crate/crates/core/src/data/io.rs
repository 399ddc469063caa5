use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb};

use super::{min_max_normalize, ImageTensor, MaskTensor, Sample};
use crate::error::{Error, Result};

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn is_png(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Unreadable {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if is_png(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn load_image(path: &Path, resolution: u32) -> Result<ImageTensor> {
    let img = open(path)?;
    let gray = !img.color().has_color();
    let r = resolution as usize;
    let (channels, mut data) = if gray {
        let buf: ImageBuffer<Luma<f32>, Vec<f32>> = img.to_luma32f();
        let buf = imageops::resize(&buf, resolution, resolution, FilterType::Triangle);
        (1, buf.into_raw())
    } else {
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> = img.to_rgb32f();
        let buf = imageops::resize(&buf, resolution, resolution, FilterType::Triangle);
        // interleaved HWC to planar CHW
        let hwc = buf.into_raw();
        let mut chw = vec![0.0; 3 * r * r];
        for (i, px) in hwc.chunks_exact(3).enumerate() {
            for c in 0..3 {
                chw[c * r * r + i] = px[c];
            }
        }
        (3, chw)
    };
    min_max_normalize(&mut data);
    ImageTensor::new(channels, r, r, data)
}

fn load_mask(path: &Path, resolution: u32) -> Result<MaskTensor> {
    let luma = open(path)?.to_luma32f();
    let (w, h) = luma.dimensions();
    let binary: GrayImage = ImageBuffer::from_fn(w, h, |x, y| Luma([u8::from(luma.get_pixel(x, y)[0] >= 0.5)]));
    let resized = imageops::resize(&binary, resolution, resolution, FilterType::Nearest);
    MaskTensor::new(resolution as usize, resolution as usize, resized.into_raw())
}

/// Loads every PNG in `image_dir` with its same-named mask from `mask_dir`.
///
/// Images are resized bilinearly and min-max scaled per image; masks are
/// thresholded at 0.5 and resized with nearest neighbour. Sample ids follow
/// the sorted file order.
pub fn load_image_mask_dir(image_dir: &Path, mask_dir: &Path, resolution: u32) -> Result<Vec<Sample>> {
    let files = png_files(image_dir)?;
    if files.is_empty() {
        return Err(Error::EmptyDirectory(image_dir.to_path_buf()));
    }
    let mut samples = Vec::with_capacity(files.len());
    let mut channels = None;
    for (id, path) in files.iter().enumerate() {
        let name = path.file_name().expect("listed files have names");
        let mask_path = mask_dir.join(name);
        if !mask_path.is_file() {
            return Err(Error::MissingMaskPair {
                image: path.clone(),
                mask_dir: mask_dir.to_path_buf(),
            });
        }
        let image = load_image(path, resolution)?;
        if *channels.get_or_insert(image.channels()) != image.channels() {
            return Err(Error::Shape(format!(
                "{} has {} channels, earlier images have {}",
                path.display(),
                image.channels(),
                channels.unwrap_or_default()
            )));
        }
        let mask = load_mask(&mask_path, resolution)?;
        samples.push(Sample::new(id, image, mask)?);
    }
    Ok(samples)
}

fn to_u8(v: f32) -> u8 {
    // round half up
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Writes values in `[0, 1]` as an 8-bit grayscale PNG.
pub fn save_gray_png(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Shape(format!("{width}×{height} png with {} values", values.len())));
    }
    let img = GrayImage::from_raw(width as u32, height as u32, values.iter().map(|&v| to_u8(v)).collect())
        .expect("length checked");
    img.save(path)?;
    Ok(())
}

/// Writes values in `[0, 1]` as a 16-bit grayscale PNG.
pub fn save_gray_png16(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Shape(format!("{width}×{height} png with {} values", values.len())));
    }
    let raw: Vec<u16> = values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) as f64 * 65535.0 + 0.5).floor() as u16)
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, raw).expect("length checked");
    img.save(path)?;
    Ok(())
}

/// Reads a PNG as a single-channel map in `[0, 1]` (no resizing); returns `(width, height, values)`.
pub fn load_gray_png(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let luma = open(path)?.to_luma32f();
    let (w, h) = luma.dimensions();
    Ok((w as usize, h as usize, luma.into_raw()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_scaling_rounds_half_up() {
        assert_eq!(to_u8(0.5), 128);
        assert_eq!(to_u8(0.0), 0);
        assert_eq!(to_u8(1.0), 255);
    }
}
