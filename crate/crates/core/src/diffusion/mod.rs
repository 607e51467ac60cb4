//! Denoising diffusion prior: schedule, forward noising, Tweedie estimation,
//! renoising, and the trainable noise predictor.

mod denoiser;

pub use denoiser::{train_denoiser, train_denoiser_from, DenoiserParams};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridImage;
use crate::rng::{self, tag};

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Linear-beta DDPM schedule. Timesteps run `1..=T`; `alpha_bar(0) == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleSpec", into = "ScheduleSpec")]
pub struct NoiseSchedule {
    beta_start: f64,
    beta_end: f64,
    beta: Vec<f64>,
    /// `alpha_bar[0] = 1`, then the running product.
    alpha_bar: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleSpec {
    timesteps: usize,
    beta_start: f64,
    beta_end: f64,
}

impl TryFrom<ScheduleSpec> for NoiseSchedule {
    type Error = Error;
    fn try_from(s: ScheduleSpec) -> Result<Self> {
        make_schedule(s.timesteps, s.beta_start, s.beta_end)
    }
}

impl From<NoiseSchedule> for ScheduleSpec {
    fn from(s: NoiseSchedule) -> Self {
        Self {
            timesteps: s.len(),
            beta_start: s.beta_start,
            beta_end: s.beta_end,
        }
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_TIMESTEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("defaults are valid")
    }
}

pub fn make_schedule(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if timesteps == 0 {
        return Err(Error::Config("schedule needs at least one timestep".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )));
    }
    let beta: Vec<f64> = (0..timesteps)
        .map(|i| {
            if timesteps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(timesteps + 1);
    alpha_bar.push(1.0);
    let mut acc = 1.0;
    for b in &beta {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule {
        beta_start,
        beta_end,
        beta,
        alpha_bar,
    })
}

impl NoiseSchedule {
    /// `T`, the number of noising steps.
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_start, self.beta_end)
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    /// `alpha_bar_t` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// `alpha_bar_1 ..= alpha_bar_T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar[1..]
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t > self.len() {
            return Err(Error::Domain(format!("timestep {t} outside [0, {}]", self.len())));
        }
        Ok(())
    }
}

/// Anything that predicts the noise in a latent at timestep `t`.
pub trait NoisePredictor {
    fn predict_eps(&self, xt: &GridImage, t: usize) -> Result<GridImage>;
}

/// `sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
pub fn noising_sample(x0: &GridImage, t: usize, eps: &GridImage, sched: &NoiseSchedule) -> Result<GridImage> {
    sched.check_timestep(t)?;
    x0.ensure_same_shape(eps)?;
    if t == 0 {
        return Ok(x0.clone());
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let values = x0.values().iter().zip(eps.values()).map(|(x, e)| a * x + b * e).collect();
    GridImage::from_vec(x0.width(), x0.height(), values)
}

/// Inverts the noising formula given a noise estimate.
pub fn tweedie_from_eps(xt: &GridImage, eps: &GridImage, t: usize, sched: &NoiseSchedule) -> Result<GridImage> {
    sched.check_timestep(t)?;
    xt.ensure_same_shape(eps)?;
    let ab = sched.alpha_bar(t);
    if ab <= 0.0 {
        return Err(Error::Singularity(t));
    }
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let values = xt.values().iter().zip(eps.values()).map(|(x, e)| (x - b * e) / a).collect();
    GridImage::from_vec(xt.width(), xt.height(), values)
}

/// `x0_hat = (xt - sqrt(1 - ab_t) eps_theta(xt, t)) / sqrt(ab_t)`.
pub fn tweedie_estimate(xt: &GridImage, t: usize, model: &impl NoisePredictor, sched: &NoiseSchedule) -> Result<GridImage> {
    if t == 0 {
        return Err(Error::Domain("tweedie estimate needs t >= 1".into()));
    }
    sched.check_timestep(t)?;
    if sched.alpha_bar(t) <= 0.0 {
        return Err(Error::Singularity(t));
    }
    let eps = model.predict_eps(xt, t)?;
    tweedie_from_eps(xt, &eps, t, sched)
}

/// Standard normal image from `rng`.
pub fn gaussian_image(width: usize, height: usize, rng: &mut impl Rng) -> GridImage {
    GridImage::from_fn(width, height, |_, _| rng.sample(StandardNormal))
}

/// Noises `x0_est` back to `t_next` with a draw derived from `seed`.
pub fn renoise(x0_est: &GridImage, t_next: usize, seed: u64, sched: &NoiseSchedule) -> Result<GridImage> {
    sched.check_timestep(t_next)?;
    if t_next == 0 {
        return Ok(x0_est.clone());
    }
    let eps = gaussian_image(x0_est.width(), x0_est.height(), &mut rng::stream(seed, &[tag::RENOISE]));
    noising_sample(x0_est, t_next, &eps, sched)
}
