use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridImage;

/// Parallel-beam acquisition: one 1D detector row per view angle.
///
/// Image-space coordinates are centered on the slice with `y` pointing up;
/// a pixel at `(row, col)` sits at `x = (col - (n-1)/2) * pixel_pitch`,
/// `y = ((n-1)/2 - row) * pixel_pitch`. The detector coordinate of that point at
/// angle `theta` is `s = x cos(theta) + y sin(theta)` and bin `b` is centered at
/// `s = (b - (num_detector_bins-1)/2) * detector_pitch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionGeometry {
    angles: Vec<f64>,
    num_detector_bins: usize,
    detector_pitch: f64,
    image_side: usize,
    pixel_pitch: f64,
}

impl ProjectionGeometry {
    /// `num_views` angles uniformly spaced over `[0, pi)` starting at 0, with the
    /// default detector: `ceil(side * sqrt 2)` bins at the pixel pitch.
    pub fn parallel(image_side: usize, num_views: usize) -> Result<Self> {
        let bins = default_detector_bins(image_side);
        Self::new(uniform_angles(num_views), bins, 1.0, image_side, 1.0)
    }

    pub fn new(
        angles: Vec<f64>,
        num_detector_bins: usize,
        detector_pitch: f64,
        image_side: usize,
        pixel_pitch: f64,
    ) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::Config("geometry needs at least one view".into()));
        }
        if image_side == 0 {
            return Err(Error::Config("image_side must be positive".into()));
        }
        if !(detector_pitch > 0.0 && detector_pitch.is_finite())
            || !(pixel_pitch > 0.0 && pixel_pitch.is_finite())
        {
            return Err(Error::Config("pitches must be positive and finite".into()));
        }
        if num_detector_bins < image_side {
            return Err(Error::Config(format!(
                "{num_detector_bins} detector bins cannot cover a {image_side}-pixel slice"
            )));
        }
        if angles.iter().any(|a| !(0.0..PI).contains(a)) {
            return Err(Error::Config("angles must lie in [0, pi)".into()));
        }
        if angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("angles must be strictly increasing".into()));
        }
        Ok(Self {
            angles,
            num_detector_bins,
            detector_pitch,
            image_side,
            pixel_pitch,
        })
    }

    /// Same detector and slice, different view set.
    pub fn with_views(&self, num_views: usize) -> Result<Self> {
        Self::new(
            uniform_angles(num_views),
            self.num_detector_bins,
            self.detector_pitch,
            self.image_side,
            self.pixel_pitch,
        )
    }

    pub fn num_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn num_detector_bins(&self) -> usize {
        self.num_detector_bins
    }

    pub fn detector_pitch(&self) -> f64 {
        self.detector_pitch
    }

    pub fn image_side(&self) -> usize {
        self.image_side
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn sinogram_len(&self) -> usize {
        self.angles.len() * self.num_detector_bins
    }

    pub(crate) fn check_image(&self, img: &GridImage) -> Result<()> {
        if img.width() != self.image_side || img.height() != self.image_side {
            return Err(Error::Dimension(format!(
                "image is {}x{}, geometry expects {}x{}",
                img.width(),
                img.height(),
                self.image_side,
                self.image_side
            )));
        }
        Ok(())
    }
}

pub fn default_detector_bins(image_side: usize) -> usize {
    (image_side as f64 * std::f64::consts::SQRT_2).ceil() as usize
}

pub fn uniform_angles(num_views: usize) -> Vec<f64> {
    (0..num_views)
        .map(|k| k as f64 * PI / num_views as f64)
        .collect()
}
