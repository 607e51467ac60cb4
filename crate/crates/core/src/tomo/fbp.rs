use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::project::smear;
use super::Sinogram;
use crate::error::{Error, Result};
use crate::grid::GridImage;

/// Frequency response used to filter each projection before backprojection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    /// Band-limited ramp (Ram-Lak).
    #[default]
    RamLak,
    /// Ramp apodized by a Hann window reaching zero at Nyquist.
    Hann,
}

/// Filtered backprojection; the pseudo-inverse used to seed the solver.
pub fn fbp_reconstruct(sino: &Sinogram, filter: FilterKind) -> Result<GridImage> {
    let geom = sino.geometry();
    let views = geom.num_angles();
    if views < 2 {
        return Err(Error::Config(format!(
            "filtered backprojection needs at least 2 views, got {views}"
        )));
    }
    let nb = geom.num_detector_bins();
    let d = geom.detector_pitch();
    let padded = (2 * nb).next_power_of_two();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(padded);
    let ifft = planner.plan_fft_inverse(padded);

    let response = filter_response(padded, d, filter, fft.as_ref());

    let mut filtered = Sinogram::zeros(geom);
    let mut buf = vec![Complex64::new(0.0, 0.0); padded];
    for a in 0..views {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (dst, &v) in buf.iter_mut().zip(sino.row(a)) {
            dst.re = v;
        }
        fft.process(&mut buf);
        for (c, h) in buf.iter_mut().zip(&response) {
            *c *= *h;
        }
        ifft.process(&mut buf);
        // 1/padded for the unnormalized inverse, d for the convolution integral
        let scale = d / padded as f64;
        let row = &mut filtered.values_mut()[a * nb..(a + 1) * nb];
        for (dst, c) in row.iter_mut().zip(&buf) {
            *dst = c.re * scale;
        }
    }
    Ok(smear(&filtered, PI / views as f64))
}

/// Spectrum of the discrete spatial ramp kernel, optionally windowed.
///
/// Building the kernel in space (`h[0] = 1/4d^2`, `h[odd k] = -1/(pi k d)^2`)
/// avoids the DC offset of sampling `|f|` directly.
fn filter_response(
    padded: usize,
    d: f64,
    filter: FilterKind,
    fft: &dyn rustfft::Fft<f64>,
) -> Vec<f64> {
    let mut kernel = vec![Complex64::new(0.0, 0.0); padded];
    for (i, k) in kernel.iter_mut().enumerate() {
        let n = if i <= padded / 2 {
            i as isize
        } else {
            i as isize - padded as isize
        };
        k.re = if n == 0 {
            1.0 / (4.0 * d * d)
        } else if n % 2 != 0 {
            -1.0 / (PI * n as f64 * d).powi(2)
        } else {
            0.0
        };
    }
    fft.process(&mut kernel);
    kernel
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let window = match filter {
                FilterKind::RamLak => 1.0,
                FilterKind::Hann => {
                    // normalized frequency in [0, 1], 1 at Nyquist
                    let f = i.min(padded - i) as f64 / (padded as f64 / 2.0);
                    0.5 * (1.0 + (PI * f).cos())
                }
            };
            h.re * window
        })
        .collect()
}
