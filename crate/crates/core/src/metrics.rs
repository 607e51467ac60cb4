//! Reference-based quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridImage, GridVolume};

/// Value returned by [`psnr`] when the images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_DEFAULT_WINDOW: usize = 7;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn mse(x: &GridImage, reference: &GridImage) -> Result<f64> {
    x.ensure_same_shape(reference)?;
    let n = x.len() as f64;
    Ok(x.values()
        .iter()
        .zip(reference.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &GridImage, reference: &GridImage, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(Error::Domain(format!("data_range must be positive, got {data_range}")));
    }
    let err = mse(x, reference)?;
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (data_range * data_range / err).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..size * size)
        .map(|i| {
            let (dy, dx) = ((i / size) as f64 - c, (i % size) as f64 - c);
            (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Mean structural similarity over all fully contained Gaussian windows.
pub fn ssim(x: &GridImage, reference: &GridImage, data_range: f64, window: usize) -> Result<f64> {
    x.ensure_same_shape(reference)?;
    if window < 3 || window % 2 == 0 {
        return Err(Error::Config(format!("SSIM window must be odd and >= 3, got {window}")));
    }
    if x.width() < window || x.height() < window {
        return Err(Error::Dimension(format!(
            "{}x{} image is smaller than the {window}-pixel SSIM window",
            x.width(),
            x.height()
        )));
    }
    if !(data_range > 0.0) {
        return Err(Error::Domain(format!("data_range must be positive, got {data_range}")));
    }
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let w = gaussian_window(window);
    let (width, height) = (x.width(), x.height());
    let (xv, yv) = (x.values(), reference.values());

    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=height - window {
        for c0 in 0..=width - window {
            let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dr in 0..window {
                let base = (r0 + dr) * width + c0;
                for dc in 0..window {
                    let k = w[dr * window + dc];
                    let (a, b) = (xv[base + dc], yv[base + dc]);
                    mx += k * a;
                    my += k * b;
                    mxx += k * a * a;
                    myy += k * b * b;
                    mxy += k * a * b;
                }
            }
            let vx = mxx - mx * mx;
            let vy = myy - my * my;
            let cov = mxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Per-slice and mean metrics of one reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl MetricReport {
    pub fn evaluate(x: &GridVolume, reference: &GridVolume, data_range: f64) -> Result<Self> {
        if x.depth() != reference.depth() {
            return Err(Error::Dimension(format!(
                "volume depths differ: {} vs {}",
                x.depth(),
                reference.depth()
            )));
        }
        let mut report = MetricReport {
            psnr: Vec::with_capacity(x.depth()),
            ssim: Vec::with_capacity(x.depth()),
        };
        for (a, b) in x.iter().zip(reference.iter()) {
            report.psnr.push(psnr(a, b, data_range)?);
            report.ssim.push(ssim(a, b, data_range, SSIM_DEFAULT_WINDOW)?);
        }
        Ok(report)
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn textured(n: usize, seed: u64) -> GridImage {
        let mut rng = crate::rng::stream(seed, &[]);
        GridImage::from_fn(n, n, |r, c| {
            let base = ((r / 4 + c / 4) % 2) as f64 * 0.6 + 0.2;
            base + 0.1 * rng.gen::<f64>()
        })
    }

    #[test]
    fn identical_images_hit_the_caps() {
        let x = textured(32, 1);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), PSNR_CAP_DB);
        assert_eq!(ssim(&x, &x, 1.0, 7).unwrap(), 1.0);
    }

    #[test]
    fn constant_offset_gives_closed_form_psnr() {
        let x = textured(16, 2);
        let y = x.map(|v| v + 0.1);
        assert!((psnr(&y, &x, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn inverted_image_has_low_ssim() {
        let x = textured(32, 3);
        let inv = x.map(|v| 1.0 - v);
        assert!(ssim(&inv, &x, 1.0, 7).unwrap() < 0.2);
    }

    #[test]
    fn small_noise_keeps_ssim_high() {
        let x = textured(48, 4);
        let mut rng = crate::rng::stream(5, &[]);
        let noisy = x.map(|v| {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            v + 0.01 * z
        });
        let s = ssim(&noisy, &x, 1.0, 7).unwrap();
        assert!(s > 0.8 && s < 1.0, "ssim {s}");
    }

    #[test]
    fn metrics_are_symmetric() {
        let x = textured(24, 6);
        let y = textured(24, 7);
        assert_eq!(psnr(&x, &y, 1.0).unwrap(), psnr(&y, &x, 1.0).unwrap());
        let (a, b) = (ssim(&x, &y, 1.0, 7).unwrap(), ssim(&y, &x, 1.0, 7).unwrap());
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn psnr_falls_with_noise_amplitude() {
        let x = textured(32, 8);
        let levels = [0.01, 0.02, 0.05, 0.1, 0.2];
        let scores: Vec<f64> = levels
            .iter()
            .map(|&s| {
                let mut rng = crate::rng::stream(9, &[]);
                let y = x.map(|v| v + s * (rng.gen::<f64>() - 0.5));
                psnr(&y, &x, 1.0).unwrap()
            })
            .collect();
        assert!(scores.windows(2).all(|w| w[1] < w[0]), "{scores:?}");
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let x = textured(8, 1);
        let y = textured(9, 1);
        assert!(matches!(psnr(&x, &y, 1.0), Err(Error::Dimension(_))));
        assert!(ssim(&x, &x, 1.0, 4).is_err());
        assert!(ssim(&x, &x, 1.0, 9).is_err());
        assert!(psnr(&x, &x, 0.0).is_err());
    }
}
