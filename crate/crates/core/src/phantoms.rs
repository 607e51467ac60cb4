//! Ellipse microstructure phantoms rendered in two modalities.
//!
//! A volume is a set of in-plane-rotated ellipsoids; each slice is the set of
//! their cross-sections. Both modalities share the geometry and differ in
//! per-ellipse attenuation and in which ellipses they see at all.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridImage, GridVolume};
use crate::rng;

/// Sub-pixel samples per axis when rasterizing ellipse coverage.
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Both,
    MainOnly,
    AuxOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Main,
    Aux,
}

/// One 2D ellipse in normalized `[-1, 1]^2` coordinates (`y` up).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseSpec {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    pub rotation: f64,
    pub attenuation_main: f64,
    pub attenuation_aux: f64,
    pub visibility: Visibility,
}

impl EllipseSpec {
    /// Attenuation this ellipse contributes in `modality`, zero if invisible there.
    pub fn attenuation(&self, modality: Modality) -> f64 {
        match (modality, self.visibility) {
            (Modality::Main, Visibility::AuxOnly) | (Modality::Aux, Visibility::MainOnly) => 0.0,
            (Modality::Main, _) => self.attenuation_main,
            (Modality::Aux, _) => self.attenuation_aux,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (sin, cos) = self.rotation.sin_cos();
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        let (a, b) = self.semi_axes;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    }

    /// Fraction of pixel `(row, col)` of a `side`-pixel grid inside the ellipse.
    pub fn coverage(&self, row: usize, col: usize, side: usize) -> f64 {
        let mut hits = 0;
        for i in 0..SUPERSAMPLE {
            for j in 0..SUPERSAMPLE {
                let (x, y) = normalized(
                    row as f64 + (i as f64 + 0.5) / SUPERSAMPLE as f64,
                    col as f64 + (j as f64 + 0.5) / SUPERSAMPLE as f64,
                    side,
                );
                if self.contains(x, y) {
                    hits += 1;
                }
            }
        }
        hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
    }

    fn bounding_radius(&self) -> f64 {
        self.semi_axes.0.max(self.semi_axes.1)
    }
}

/// Continuous (row, col) in pixel units to normalized `(x, y)`.
fn normalized(row: f64, col: f64, side: usize) -> (f64, f64) {
    let s = side as f64;
    (2.0 * col / s - 1.0, 1.0 - 2.0 * row / s)
}

/// Additive compositing of ellipse coverage, clipped to `[0, 1]`.
pub fn render_ellipses(ellipses: &[EllipseSpec], side: usize, modality: Modality) -> GridImage {
    let mut img = GridImage::zeros(side, side);
    let pixel = 2.0 / side as f64;
    for e in ellipses {
        let mu = e.attenuation(modality);
        if mu == 0.0 {
            continue;
        }
        // pixel-space bounding box
        let r = e.bounding_radius() + pixel;
        let col_lo = (((e.center.0 - r + 1.0) / pixel).floor().max(0.0)) as usize;
        let col_hi = (((e.center.0 + r + 1.0) / pixel).ceil().min(side as f64)) as usize;
        let row_lo = (((1.0 - e.center.1 - r) / pixel).floor().max(0.0)) as usize;
        let row_hi = (((1.0 - e.center.1 + r) / pixel).ceil().min(side as f64)) as usize;
        for row in row_lo..row_hi {
            for col in col_lo..col_hi {
                let cov = e.coverage(row, col, side);
                if cov > 0.0 {
                    let v = img.get(row, col) + cov * mu;
                    img.set(row, col, v);
                }
            }
        }
    }
    img.clipped(0.0, 1.0)
}

/// The modified Shepp-Logan head phantom, values in `[0, 1]`.
pub fn shepp_logan(side: usize) -> GridImage {
    // (intensity, semi-axis x, semi-axis y, center x, center y, rotation in degrees)
    const TABLE: [(f64, f64, f64, f64, f64, f64); 10] = [
        (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
        (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
        (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
        (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
        (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
        (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
        (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
        (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
        (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
        (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
    ];
    let shapes: Vec<(f64, EllipseSpec)> = TABLE
        .iter()
        .map(|&(mu, a, b, x, y, deg)| {
            let spec = EllipseSpec {
                center: (x, y),
                semi_axes: (a, b),
                rotation: deg.to_radians(),
                attenuation_main: mu.abs(),
                attenuation_aux: mu.abs(),
                visibility: Visibility::Both,
            };
            (mu, spec)
        })
        .collect();
    GridImage::from_fn(side, side, |row, col| {
        shapes
            .iter()
            .map(|(mu, e)| mu * e.coverage(row, col, side))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    })
}

/// Sampling distribution for phantoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomRecipe {
    pub volume_side: usize,
    pub depth: usize,
    /// Inclusive range of ellipses (ellipsoids for volumes) per draw.
    pub ellipse_count_range: (usize, usize),
    /// In-plane semi-axis range, normalized units.
    pub semi_axis_range: (f64, f64),
    /// Ellipsoid extent along depth, as a fraction of the normalized depth.
    pub depth_axis_range: (f64, f64),
    /// Centers are drawn inside this normalized radius.
    pub center_radius: f64,
    pub main_attenuation: (f64, f64),
    pub aux_attenuation: (f64, f64),
    /// Weight of the main contrast in the aux contrast draw, in `[0, 1]`.
    pub contrast_coupling: f64,
    /// Fractions of ellipses visible only in main / only in aux.
    pub main_only_fraction: f64,
    pub aux_only_fraction: f64,
}

impl Default for PhantomRecipe {
    fn default() -> Self {
        Self {
            volume_side: 64,
            depth: 32,
            ellipse_count_range: (14, 24),
            semi_axis_range: (0.1, 0.3),
            depth_axis_range: (0.4, 1.2),
            center_radius: 0.6,
            main_attenuation: (0.2, 0.7),
            aux_attenuation: (0.2, 0.7),
            contrast_coupling: 0.3,
            main_only_fraction: 0.15,
            aux_only_fraction: 0.15,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), min: f64, max: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && min <= lo && lo <= hi && hi <= max) {
        return Err(Error::Config(format!(
            "{name} = ({lo}, {hi}) must satisfy {min} <= lo <= hi <= {max}"
        )));
    }
    Ok(())
}

impl PhantomRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.volume_side == 0 || self.depth == 0 {
            return Err(Error::Config("volume_side and depth must be positive".into()));
        }
        let (lo, hi) = self.ellipse_count_range;
        if lo > hi {
            return Err(Error::Config(format!("ellipse_count_range ({lo}, {hi}) is inverted")));
        }
        check_range("semi_axis_range", self.semi_axis_range, f64::MIN_POSITIVE, 1.0)?;
        check_range("depth_axis_range", self.depth_axis_range, f64::MIN_POSITIVE, 2.0)?;
        check_range("main_attenuation", self.main_attenuation, 0.0, 1.0)?;
        check_range("aux_attenuation", self.aux_attenuation, 0.0, 1.0)?;
        check_range("contrast_coupling", (self.contrast_coupling, self.contrast_coupling), 0.0, 1.0)?;
        check_range("center_radius", (self.center_radius, self.center_radius), 0.0, 1.0)?;
        let exclusive = self.main_only_fraction + self.aux_only_fraction;
        if self.main_only_fraction < 0.0 || self.aux_only_fraction < 0.0 || exclusive > 0.3 + 1e-12 {
            return Err(Error::Config(format!(
                "modality-exclusive fractions must be non-negative and sum to at most 0.3, got {exclusive}"
            )));
        }
        Ok(())
    }

    fn draw_count(&self, rng: &mut ChaCha8Rng) -> usize {
        let (lo, hi) = self.ellipse_count_range;
        rng.gen_range(lo..=hi)
    }

    fn draw_center(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let r = self.center_radius * rng.gen::<f64>().sqrt();
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        (r * phi.cos(), r * phi.sin())
    }

    fn draw_in(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
        if hi > lo {
            rng.gen_range(lo..=hi)
        } else {
            lo
        }
    }

    /// Correlated main/aux attenuation pair.
    fn draw_contrast(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let m = rng.gen::<f64>();
        let u = rng.gen::<f64>();
        let (mlo, mhi) = self.main_attenuation;
        let (alo, ahi) = self.aux_attenuation;
        let k = self.contrast_coupling;
        (mlo + (mhi - mlo) * m, alo + (ahi - alo) * (k * m + (1.0 - k) * u))
    }

    /// Visibility labels for `n` ellipses: the exclusive counts are floored so
    /// at least 70% of ellipses are visible in both modalities.
    fn draw_visibility(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Visibility> {
        let main_only = (n as f64 * self.main_only_fraction).floor() as usize;
        let aux_only = (n as f64 * self.aux_only_fraction).floor() as usize;
        let mut labels = vec![Visibility::Both; n];
        labels[..main_only].fill(Visibility::MainOnly);
        labels[main_only..main_only + aux_only].fill(Visibility::AuxOnly);
        labels.shuffle(rng);
        labels
    }
}

/// One draw from the prior's training distribution: a single slice of
/// ellipses, main-modality contrast, all visible.
pub fn sample_prior_slice(recipe: &PhantomRecipe, seed: u64) -> Result<GridImage> {
    recipe.validate()?;
    let mut rng = rng::stream(seed, &[rng::tag::PRIOR_SLICE]);
    let n = recipe.draw_count(&mut rng);
    let ellipses: Vec<EllipseSpec> = (0..n)
        .map(|_| {
            let center = recipe.draw_center(&mut rng);
            let a = PhantomRecipe::draw_in(&mut rng, recipe.semi_axis_range);
            let b = PhantomRecipe::draw_in(&mut rng, recipe.semi_axis_range);
            let rotation = rng.gen_range(0.0..std::f64::consts::PI);
            let (mu, _) = recipe.draw_contrast(&mut rng);
            EllipseSpec {
                center,
                semi_axes: (a, b),
                rotation,
                attenuation_main: mu,
                attenuation_aux: mu,
                visibility: Visibility::Both,
            }
        })
        .collect();
    Ok(render_ellipses(&ellipses, recipe.volume_side, Modality::Main))
}

/// An ellipsoid with in-plane rotation only; normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Ellipsoid {
    center: (f64, f64, f64),
    semi_axes: (f64, f64, f64),
    rotation: f64,
    attenuation_main: f64,
    attenuation_aux: f64,
    visibility: Visibility,
}

/// The shared geometry of a paired volume.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedPhantom {
    side: usize,
    depth: usize,
    ellipsoids: Vec<Ellipsoid>,
}

impl PairedPhantom {
    pub fn sample(recipe: &PhantomRecipe, seed: u64) -> Result<Self> {
        recipe.validate()?;
        let mut rng = rng::stream(seed, &[rng::tag::PHANTOM]);
        let n = recipe.draw_count(&mut rng);
        let visibility = recipe.draw_visibility(n, &mut rng);
        let ellipsoids = visibility
            .into_iter()
            .map(|visibility| {
                let (cx, cy) = recipe.draw_center(&mut rng);
                let cz = rng.gen_range(-1.0..1.0);
                let a = PhantomRecipe::draw_in(&mut rng, recipe.semi_axis_range);
                let b = PhantomRecipe::draw_in(&mut rng, recipe.semi_axis_range);
                let c = PhantomRecipe::draw_in(&mut rng, recipe.depth_axis_range);
                let rotation = rng.gen_range(0.0..std::f64::consts::PI);
                let (attenuation_main, attenuation_aux) = recipe.draw_contrast(&mut rng);
                Ellipsoid {
                    center: (cx, cy, cz),
                    semi_axes: (a, b, c),
                    rotation,
                    attenuation_main,
                    attenuation_aux,
                    visibility,
                }
            })
            .collect();
        Ok(Self {
            side: recipe.volume_side,
            depth: recipe.depth,
            ellipsoids,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Cross-sections through slice `k`.
    pub fn slice_ellipses(&self, k: usize) -> Vec<EllipseSpec> {
        let z = (2.0 * k as f64 + 1.0) / self.depth as f64 - 1.0;
        self.ellipsoids
            .iter()
            .filter_map(|e| {
                let dz = (z - e.center.2) / e.semi_axes.2;
                if dz.abs() >= 1.0 {
                    return None;
                }
                let scale = (1.0 - dz * dz).sqrt();
                Some(EllipseSpec {
                    center: (e.center.0, e.center.1),
                    semi_axes: (e.semi_axes.0 * scale, e.semi_axes.1 * scale),
                    rotation: e.rotation,
                    attenuation_main: e.attenuation_main,
                    attenuation_aux: e.attenuation_aux,
                    visibility: e.visibility,
                })
            })
            .collect()
    }

    pub fn render_slice(&self, k: usize, modality: Modality) -> GridImage {
        render_ellipses(&self.slice_ellipses(k), self.side, modality)
    }

    pub fn render(&self, modality: Modality) -> GridVolume {
        GridVolume::new((0..self.depth).map(|k| self.render_slice(k, modality)).collect())
            .expect("depth is positive")
    }

    pub fn visibility_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for e in &self.ellipsoids {
            counts[match e.visibility {
                Visibility::Both => 0,
                Visibility::MainOnly => 1,
                Visibility::AuxOnly => 2,
            }] += 1;
        }
        counts
    }
}

/// Main- and aux-modality volumes of one sampled microstructure.
pub fn generate_paired_volume(recipe: &PhantomRecipe, seed: u64) -> Result<(GridVolume, GridVolume)> {
    let phantom = PairedPhantom::sample(recipe, seed)?;
    Ok((phantom.render(Modality::Main), phantom.render(Modality::Aux)))
}
