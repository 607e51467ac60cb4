//! Simulated degraded reconstructions and the paired translation dataset.
//!
//! The degradation pipeline is fixed: project at `num_views`, zero-fill all
//! but `sampling_keep_fraction` of the detector bins in every view, add
//! Gaussian measurement noise, reconstruct by FBP, blur in image space.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridImage;
use crate::phantoms::{Modality, PairedPhantom, PhantomRecipe};
use crate::rng::{self, tag};
use crate::tomo::{add_noise, fbp_reconstruct, forward_project, FilterKind, ProjectionGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSpec {
    pub num_views: usize,
    #[serde(default)]
    pub noise_relative_sigma: f64,
    /// Gaussian blur standard deviation in pixels.
    #[serde(default)]
    pub blur_sigma: f64,
    #[serde(default = "one")]
    pub sampling_keep_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl DegradationSpec {
    /// Dense, noiseless, unblurred acquisition.
    pub fn ideal(num_views: usize) -> Self {
        Self {
            num_views,
            noise_relative_sigma: 0.0,
            blur_sigma: 0.0,
            sampling_keep_fraction: 1.0,
            seed: 0,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_views < 2 {
            return Err(Error::Config(format!(
                "num_views must be at least 2, got {}",
                self.num_views
            )));
        }
        if !(self.noise_relative_sigma >= 0.0 && self.noise_relative_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_relative_sigma must be >= 0, got {}",
                self.noise_relative_sigma
            )));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::Config(format!("blur_sigma must be >= 0, got {}", self.blur_sigma)));
        }
        if !(self.sampling_keep_fraction > 0.0 && self.sampling_keep_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "sampling_keep_fraction must lie in (0, 1], got {}",
                self.sampling_keep_fraction
            )));
        }
        Ok(())
    }
}

/// Runs the degradation pipeline on one square slice.
pub fn degraded_reconstruction(
    slice: &GridImage,
    spec: &DegradationSpec,
    filter: FilterKind,
) -> Result<GridImage> {
    spec.validate()?;
    if slice.width() != slice.height() {
        return Err(Error::Dimension(format!(
            "slice must be square, got {}x{}",
            slice.width(),
            slice.height()
        )));
    }
    let geom = ProjectionGeometry::parallel(slice.width(), spec.num_views)?;
    let mut sino = forward_project(slice, &geom)?;
    if spec.sampling_keep_fraction < 1.0 {
        let nb = geom.num_detector_bins();
        let keep = ((spec.sampling_keep_fraction * nb as f64).round() as usize).clamp(1, nb);
        let mut rng = rng::stream(spec.seed, &[tag::SAMPLING]);
        let values = sino.values_mut();
        for view in 0..geom.num_angles() {
            let mut mask = vec![false; nb];
            for b in index::sample(&mut rng, nb, keep) {
                mask[b] = true;
            }
            for (v, kept) in values[view * nb..(view + 1) * nb].iter_mut().zip(mask) {
                if !kept {
                    *v = 0.0;
                }
            }
        }
    }
    let sino = add_noise(&sino, spec.noise_relative_sigma, rng::mix(spec.seed, &[tag::NOISE]))?;
    let rec = fbp_reconstruct(&sino, filter)?;
    Ok(gaussian_blur(&rec, spec.blur_sigma))
}

fn reflect(i: isize, n: isize) -> usize {
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

/// Separable Gaussian blur that scatters each pixel's mass with a normalized
/// kernel, reflecting at the borders, so total intensity is conserved.
pub fn gaussian_blur(img: &GridImage, sigma: f64) -> GridImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (w, h) = (img.width(), img.height());
    let mut tmp = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let v = img.get(r, c);
            for (k, &kv) in kernel.iter().enumerate() {
                let cc = reflect(c as isize + k as isize - radius, w as isize);
                tmp[r * w + cc] += kv * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let v = tmp[r * w + c];
            for (k, &kv) in kernel.iter().enumerate() {
                let rr = reflect(r as isize + k as isize - radius, h as isize);
                out[rr * w + c] += kv * v;
            }
        }
    }
    GridImage::from_vec(w, h, out).expect("shape preserved")
}

/// A registered (degraded main, degraded aux, ideal main) training triple.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub degraded_main: GridImage,
    pub degraded_aux: GridImage,
    pub ideal_main: GridImage,
    pub spec_main: DegradationSpec,
    pub spec_aux: DegradationSpec,
}

/// Every combination of the given axes.
pub fn spec_product(
    views: &[usize],
    noise: &[f64],
    blur: &[f64],
    keep: &[f64],
) -> Vec<DegradationSpec> {
    let mut out = Vec::new();
    for &num_views in views {
        for &noise_relative_sigma in noise {
            for &blur_sigma in blur {
                for &sampling_keep_fraction in keep {
                    out.push(DegradationSpec {
                        num_views,
                        noise_relative_sigma,
                        blur_sigma,
                        sampling_keep_fraction,
                        seed: 0,
                    });
                }
            }
        }
    }
    out
}

/// The shipped default grid: views {8..256}, noise {0, 5%}, blur {0, 1, 2}px,
/// keep {0.7, 1}, every main spec paired with every aux spec.
pub fn default_spec_grid() -> Vec<(DegradationSpec, DegradationSpec)> {
    let axis = spec_product(&[8, 16, 32, 64, 128, 256], &[0.0, 0.05], &[0.0, 1.0, 2.0], &[0.7, 1.0]);
    let mut grid = Vec::with_capacity(axis.len() * axis.len());
    for m in &axis {
        for a in &axis {
            grid.push((*m, *a));
        }
    }
    grid
}

/// Seed of sample `index` in a dataset rooted at `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    rng::mix(seed, &[tag::DATASET, index as u64])
}

/// Draws `count` paired samples from fresh phantoms.
///
/// Each sample uses its own derived seed (see [`sample_seed`]) for the
/// phantom, slice choice, grid cell and degradation noise; the finished list
/// is shuffled by a stream derived from `seed`.
pub fn build_paired_dataset(
    recipe: &PhantomRecipe,
    ideal_spec: &DegradationSpec,
    spec_grid: &[(DegradationSpec, DegradationSpec)],
    count: usize,
    seed: u64,
    filter: FilterKind,
) -> Result<Vec<PairedSample>> {
    if spec_grid.is_empty() {
        return Err(Error::Config("degradation spec grid is empty".into()));
    }
    recipe.validate()?;
    ideal_spec.validate()?;
    let mut samples = (0..count)
        .map(|i| {
            let s = sample_seed(seed, i);
            let phantom = PairedPhantom::sample(recipe, s)?;
            let mut rng = rng::stream(s, &[tag::DATASET]);
            let k = rng.gen_range(0..phantom.depth());
            let (spec_main, spec_aux) = spec_grid[rng.gen_range(0..spec_grid.len())];
            let spec_main = spec_main.with_seed(rng::mix(s, &[1]));
            let spec_aux = spec_aux.with_seed(rng::mix(s, &[2]));
            let main = phantom.render_slice(k, Modality::Main);
            let aux = phantom.render_slice(k, Modality::Aux);
            Ok(PairedSample {
                degraded_main: degraded_reconstruction(&main, &spec_main, filter)?,
                degraded_aux: degraded_reconstruction(&aux, &spec_aux, filter)?,
                ideal_main: degraded_reconstruction(&main, &ideal_spec.with_seed(rng::mix(s, &[3])), filter)?,
                spec_main,
                spec_aux,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    samples.shuffle(&mut rng::stream(seed, &[tag::DATASET, u64::MAX]));
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use crate::phantoms::generate_paired_volume;

    fn slice() -> GridImage {
        let (main, _) = generate_paired_volume(&PhantomRecipe::default(), 4).unwrap();
        main.slice(16).clone()
    }

    #[test]
    fn dense_clean_spec_reduces_to_fbp() {
        let s = slice();
        let rec = degraded_reconstruction(&s, &DegradationSpec::ideal(256), FilterKind::RamLak).unwrap();
        assert!(psnr(&rec, &s, 1.0).unwrap() >= 30.0);
    }

    #[test]
    fn degradation_is_seed_deterministic() {
        let s = slice();
        let spec = DegradationSpec {
            num_views: 32,
            noise_relative_sigma: 0.05,
            blur_sigma: 1.0,
            sampling_keep_fraction: 0.7,
            seed: 21,
        };
        let a = degraded_reconstruction(&s, &spec, FilterKind::RamLak).unwrap();
        assert_eq!(a, degraded_reconstruction(&s, &spec, FilterKind::RamLak).unwrap());
    }

    #[test]
    fn fewer_views_hurt() {
        let s = slice();
        let p = |v| {
            let r = degraded_reconstruction(&s, &DegradationSpec::ideal(v), FilterKind::RamLak).unwrap();
            psnr(&r, &s, 1.0).unwrap()
        };
        assert!(p(8) < p(64));
    }

    #[test]
    fn blur_conserves_mass() {
        let s = slice();
        for sigma in [0.5, 1.0, 2.0, 5.0] {
            let b = gaussian_blur(&s, sigma);
            let (m0, m1) = (s.mean(), b.mean());
            assert!(((m1 - m0) / m0).abs() <= 1e-6, "sigma {sigma}: {m0} vs {m1}");
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let s = slice();
        let bad = DegradationSpec {
            sampling_keep_fraction: 0.0,
            ..DegradationSpec::ideal(8)
        };
        assert!(matches!(
            degraded_reconstruction(&s, &bad, FilterKind::RamLak),
            Err(Error::Config(_))
        ));
        let bad = DegradationSpec {
            noise_relative_sigma: -1.0,
            ..DegradationSpec::ideal(8)
        };
        assert!(degraded_reconstruction(&s, &bad, FilterKind::RamLak).is_err());
        assert!(degraded_reconstruction(&GridImage::zeros(8, 6), &DegradationSpec::ideal(8), FilterKind::RamLak).is_err());
    }

    #[test]
    fn empty_grid_is_a_config_error() {
        let r = build_paired_dataset(
            &PhantomRecipe::default(),
            &DegradationSpec::ideal(256),
            &[],
            3,
            0,
            FilterKind::RamLak,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn default_grid_covers_declared_axes() {
        let grid = default_spec_grid();
        assert_eq!(grid.len(), 72 * 72);
        assert!(grid.iter().any(|(m, _)| m.num_views == 8 && m.blur_sigma == 2.0));
    }
}
