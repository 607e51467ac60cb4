//! Dense 2D slices and slice stacks.

use crate::error::{Error, Result};

/// A square-or-rectangular slice of attenuation values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GridImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "expected {}x{}={} values, got {}",
                width,
                height,
                width * height,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                values.push(f(row, col));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.width + col] = v;
    }

    pub fn same_shape(&self, other: &GridImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_same_shape(&self, other: &GridImage) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Domain(format!("non-finite pixel at index {i}"))),
        }
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> GridImage {
        GridImage {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clipped(&self, lo: f64, hi: f64) -> GridImage {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }

    pub fn dot(&self, other: &GridImage) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self + scale * other`, in place.
    pub fn axpy(&mut self, scale: f64, other: &GridImage) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }
}

/// A stack of equally shaped slices.
#[derive(Debug, Clone, PartialEq)]
pub struct GridVolume {
    slices: Vec<GridImage>,
}

impl GridVolume {
    pub fn new(slices: Vec<GridImage>) -> Result<Self> {
        let Some(first) = slices.first() else {
            return Err(Error::Dimension("volume needs at least one slice".into()));
        };
        if let Some(bad) = slices.iter().position(|s| !s.same_shape(first)) {
            return Err(Error::Dimension(format!(
                "slice {bad} is {}x{}, expected {}x{}",
                slices[bad].width(),
                slices[bad].height(),
                first.width(),
                first.height()
            )));
        }
        Ok(Self { slices })
    }

    pub fn depth(&self) -> usize {
        self.slices.len()
    }

    pub fn width(&self) -> usize {
        self.slices[0].width()
    }

    pub fn height(&self) -> usize {
        self.slices[0].height()
    }

    pub fn slices(&self) -> &[GridImage] {
        &self.slices
    }

    pub fn slice(&self, k: usize) -> &GridImage {
        &self.slices[k]
    }

    pub fn into_slices(self) -> Vec<GridImage> {
        self.slices
    }

    pub fn iter(&self) -> std::slice::Iter<'_, GridImage> {
        self.slices.iter()
    }
}
