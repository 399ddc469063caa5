//! Dense batched buffers in NCHW / NHW layout.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A batch of single-channel `h×w` maps: probabilities, masks or confidences.
#[derive(Clone, Debug, PartialEq)]
pub struct MapBatch<T> {
    n: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Scalar> MapBatch<T> {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * h * w {
            return Err(Error::Shape(format!(
                "map batch {n}×{h}×{w} needs {} values, got {}",
                n * h * w,
                data.len()
            )));
        }
        Ok(Self { n, h, w, data })
    }

    pub fn filled(n: usize, h: usize, w: usize, value: T) -> Self {
        Self {
            n,
            h,
            w,
            data: vec![value; n * h * w],
        }
    }

    pub fn zeros(n: usize, h: usize, w: usize) -> Self {
        Self::filled(n, h, w, T::zero())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, i: usize) -> &[T] {
        let p = self.pixels();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn map_mut(&mut self, i: usize) -> &mut [T] {
        let p = self.pixels();
        &mut self.data[i * p..(i + 1) * p]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n == other.n && self.h == other.h && self.w == other.w
    }

    pub fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {}×{}×{} vs {}×{}×{}",
                self.n, self.h, self.w, other.n, other.h, other.w
            )))
        }
    }

    /// Stacks batches with equal spatial size along the batch axis.
    pub fn concat(parts: &[&Self]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::Shape("concat of zero map batches".into()));
        };
        let (h, w) = (first.h, first.w);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut n = 0;
        for p in parts {
            if p.h != h || p.w != w {
                return Err(Error::Shape(format!(
                    "concat: {}×{} vs {}×{}",
                    h, w, p.h, p.w
                )));
            }
            data.extend_from_slice(&p.data);
            n += p.n;
        }
        Ok(Self { n, h, w, data })
    }

    /// Splits off maps `[start, start + count)` as a new batch.
    pub fn slice(&self, start: usize, count: usize) -> Self {
        let p = self.pixels();
        Self {
            n: count,
            h: self.h,
            w: self.w,
            data: self.data[start * p..(start + count) * p].to_vec(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> MapBatch<U> {
        MapBatch {
            n: self.n,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| v.as_f64()).sum::<f64>() / self.data.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A batch of `c×h×w` images.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch<T> {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Scalar> ImageBatch<T> {
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::Shape(format!(
                "image batch {n}×{c}×{h}×{w} needs {} values, got {}",
                n * c * h * w,
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.c * self.h * self.w;
        &self.data[i * s..(i + 1) * s]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// A one-channel image batch viewing the same values as `maps`.
    pub fn from_maps(maps: &MapBatch<T>) -> Self {
        Self {
            n: maps.len(),
            c: 1,
            h: maps.height(),
            w: maps.width(),
            data: maps.data().to_vec(),
        }
    }

    pub fn concat(parts: &[&Self]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::Shape("concat of zero image batches".into()));
        };
        let (c, h, w) = (first.c, first.h, first.w);
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if (p.c, p.h, p.w) != (c, h, w) {
                return Err(Error::Shape(format!(
                    "concat: {c}×{h}×{w} vs {}×{}×{}",
                    p.c, p.h, p.w
                )));
            }
            data.extend_from_slice(&p.data);
            n += p.n;
        }
        Ok(Self { n, c, h, w, data })
    }
}
