//! Synthetic blob images: 1–3 filled ellipses on a flat background plus
//! Gaussian noise, with exact rasterized masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ImageTensor, MaskTensor, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub resolution: usize,
    pub seed: u64,
    pub noise_level: f64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 5 {
            return Err(Error::config("synth.n", "must be at least 5"));
        }
        if self.resolution < 32 {
            return Err(Error::config("synth.resolution", "must be at least 32"));
        }
        if !(0.0..1.0).contains(&self.noise_level) {
            return Err(Error::config("synth.noise_level", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// A rotated ellipse in pixel coordinates (pixel `(row, col)` has centre `(row + 0.5, col + 0.5)`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.semi_major;
        let v = (-dx * s + dy * c) / self.semi_minor;
        u * u + v * v <= 1.0
    }
}

/// Everything needed to re-render one synthetic sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub id: usize,
    pub background: f64,
    pub foreground: f64,
    pub ellipses: Vec<Ellipse>,
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub samples: Vec<Sample>,
    pub params: Vec<ShapeParams>,
}

pub fn rasterize_ellipses(ellipses: &[Ellipse], resolution: usize) -> MaskTensor {
    let mut data = vec![0u8; resolution * resolution];
    for row in 0..resolution {
        for col in 0..resolution {
            let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
            if ellipses.iter().any(|e| e.contains(x, y)) {
                data[row * resolution + col] = 1;
            }
        }
    }
    MaskTensor::new(resolution, resolution, data).expect("binary by construction")
}

const MIN_CONTRAST: f64 = 0.3;
const MAX_CONTRAST: f64 = 0.45;

fn draw_params(id: usize, res: f64, rng: &mut ChaCha8Rng) -> ShapeParams {
    let count = rng.random_range(1..=3);
    let ellipses = (0..count)
        .map(|_| {
            let semi_major = rng.random_range(0.08..0.2) * res;
            let semi_minor = rng.random_range(0.5..1.0) * semi_major;
            Ellipse {
                cx: rng.random_range(0.2..0.8) * res,
                cy: rng.random_range(0.2..0.8) * res,
                semi_major,
                semi_minor,
                angle: rng.random_range(0.0..std::f64::consts::PI),
            }
        })
        .collect();
    let contrast = rng.random_range(MIN_CONTRAST..MAX_CONTRAST);
    let background = rng.random_range(0.05..(0.95 - contrast));
    ShapeParams {
        id,
        background,
        foreground: background + contrast,
        ellipses,
    }
}

/// Generates `n` image/mask pairs; the output is a pure function of the config.
pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let res = cfg.resolution;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_level).map_err(|e| Error::config("synth.noise_level", e.to_string()))?;
    let mut samples = Vec::with_capacity(cfg.n);
    let mut params = Vec::with_capacity(cfg.n);
    for id in 0..cfg.n {
        let p = draw_params(id, res as f64, &mut rng);
        let mask = rasterize_ellipses(&p.ellipses, res);
        let data = mask
            .data()
            .iter()
            .map(|&m| {
                let base = if m == 1 { p.foreground } else { p.background };
                let v = if cfg.noise_level > 0.0 {
                    base + noise.sample(&mut rng)
                } else {
                    base
                };
                v.clamp(0.0, 1.0) as f32
            })
            .collect();
        let image = ImageTensor::new(1, res, res, data)?;
        samples.push(Sample::new(id, image, mask)?);
        params.push(p);
    }
    Ok(SyntheticDataset { samples, params })
}
