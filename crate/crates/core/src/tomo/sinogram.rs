use rand_distr::{Distribution, StandardNormal};

use super::ProjectionGeometry;
use crate::error::{Error, Result};
use crate::rng;

/// Line-integral measurements, `num_angles` rows of `num_detector_bins` each.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    geometry: ProjectionGeometry,
    values: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(geometry: &ProjectionGeometry) -> Self {
        Self {
            values: vec![0.0; geometry.sinogram_len()],
            geometry: geometry.clone(),
        }
    }

    pub fn from_vec(geometry: &ProjectionGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.sinogram_len() {
            return Err(Error::Dimension(format!(
                "sinogram needs {}x{} values, got {}",
                geometry.num_angles(),
                geometry.num_detector_bins(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite sinogram value".into()));
        }
        Ok(Self {
            geometry: geometry.clone(),
            values,
        })
    }

    pub fn geometry(&self) -> &ProjectionGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, angle: usize) -> &[f64] {
        let nb = self.geometry.num_detector_bins();
        &self.values[angle * nb..(angle + 1) * nb]
    }

    pub fn dot(&self, other: &Sinogram) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, k: f64) -> Sinogram {
        Sinogram {
            geometry: self.geometry.clone(),
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }

    /// `self - other`; both must share a geometry.
    pub fn residual(&self, other: &Sinogram) -> Result<Sinogram> {
        if self.geometry != other.geometry {
            return Err(Error::Dimension("sinogram geometries differ".into()));
        }
        Ok(Sinogram {
            geometry: self.geometry.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }
}

/// Adds i.i.d. Gaussian noise with standard deviation
/// `relative_sigma * mean(|values|)`.
pub fn add_noise(sino: &Sinogram, relative_sigma: f64, seed: u64) -> Result<Sinogram> {
    if !(relative_sigma >= 0.0) || !relative_sigma.is_finite() {
        return Err(Error::Domain(format!(
            "relative_sigma must be a finite non-negative number, got {relative_sigma}"
        )));
    }
    if relative_sigma == 0.0 {
        return Ok(sino.clone());
    }
    let n = sino.values.len() as f64;
    let sigma = relative_sigma * sino.values.iter().map(|v| v.abs()).sum::<f64>() / n;
    let mut rng = rng::stream(seed, &[rng::tag::NOISE]);
    let values = sino
        .values
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + sigma * z
        })
        .collect();
    Ok(Sinogram {
        geometry: sino.geometry.clone(),
        values,
    })
}
