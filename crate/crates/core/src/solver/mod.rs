//! The reconstruction loop: latent initialization from FBP, test-time
//! adaptation of the prior on the data-consistency loss, Tweedie plus
//! data-consistency prediction, periodic cross-modal refinement, renoising.

mod trace;

pub use trace::{StepRecord, Trace};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{gaussian_image, noising_sample, renoise, tweedie_from_eps, DenoiserParams, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::grid::{GridImage, GridVolume};
use crate::metrics;
use crate::rng::{self, tag};
use crate::tomo::{back_project, fbp_reconstruct, forward_project, operator_norm_sq, FilterKind, ProjectionGeometry, Sinogram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Number of reverse steps `T'`.
    pub t_prime: usize,
    /// Gradient steps on the prior per reverse step.
    pub num_adapt_steps: usize,
    pub adapt_lr: f64,
    /// Slices per adaptation minibatch.
    pub minibatch_k: usize,
    pub crossmodal_enabled: bool,
    pub crossmodal_period: usize,
    pub crossmodal_min_t: usize,
    /// Image-space gradient steps on `||y - A x||^2` after each Tweedie estimate.
    pub inner_dc_steps: usize,
    /// Data-consistency step size as a fraction of `1 / ||A||^2`.
    pub dc_step_scale: f64,
    /// Schedule index reached by solver step `T'`; step 1 maps to index 1.
    pub schedule_start: usize,
    pub fbp_filter: FilterKind,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            t_prime: 10,
            num_adapt_steps: 10,
            adapt_lr: 1e-8,
            minibatch_k: 2,
            crossmodal_enabled: false,
            crossmodal_period: 2,
            crossmodal_min_t: 2,
            inner_dc_steps: 20,
            dc_step_scale: 1.9,
            schedule_start: 200,
            fbp_filter: FilterKind::RamLak,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.t_prime == 0 {
            return Err(Error::Config("t_prime must be at least 1".into()));
        }
        if self.minibatch_k == 0 {
            return Err(Error::Config("minibatch_k must be at least 1".into()));
        }
        if !(self.adapt_lr.is_finite() && self.adapt_lr >= 0.0) {
            return Err(Error::Config(format!("adapt_lr {} must be finite and >= 0", self.adapt_lr)));
        }
        if self.crossmodal_period == 0 {
            return Err(Error::Config("crossmodal_period must be at least 1".into()));
        }
        if !(self.dc_step_scale > 0.0 && self.dc_step_scale < 2.0) {
            return Err(Error::Config(format!("dc_step_scale {} outside (0, 2)", self.dc_step_scale)));
        }
        if self.schedule_start == 0 || self.schedule_start > sched.len() {
            return Err(Error::Config(format!(
                "schedule_start {} outside [1, {}]",
                self.schedule_start,
                sched.len()
            )));
        }
        if self.schedule_start < self.t_prime {
            return Err(Error::Config(format!(
                "schedule_start {} is below t_prime {}",
                self.schedule_start, self.t_prime
            )));
        }
        Ok(())
    }

    /// Schedule index for solver step `t` in `0..=T'`: a uniform stride from
    /// 1 at `t = 1` to `schedule_start` at `t = T'`, with 0 left as the
    /// clean boundary.
    pub fn schedule_index(&self, t: usize) -> usize {
        match t {
            0 => 0,
            _ if self.t_prime == 1 => self.schedule_start,
            _ => {
                let num = (t - 1) * (self.schedule_start - 1);
                let den = self.t_prime - 1;
                1 + (2 * num + den) / (2 * den)
            }
        }
    }

    /// Whether refinement fires at solver step `t`, ignoring the enable flag.
    pub fn cadence(&self, t: usize) -> bool {
        t % self.crossmodal_period == 0 && t >= self.crossmodal_min_t
    }

    /// Closed-form count of refinement firings over a run.
    pub fn expected_refinements(&self) -> usize {
        if !self.crossmodal_enabled {
            return 0;
        }
        (1..=self.t_prime).filter(|&t| self.cadence(t)).count()
    }
}

/// Maps a main-modality estimate and an auxiliary image to a refined estimate.
pub trait Refiner: Sync {
    fn refine(&self, estimate: &GridImage, aux: &GridImage) -> Result<GridImage>;
}

/// Returns the estimate unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRefiner;

impl Refiner for IdentityRefiner {
    fn refine(&self, estimate: &GridImage, _aux: &GridImage) -> Result<GridImage> {
        Ok(estimate.clone())
    }
}

/// Projected gradient descent on `0.5 ||y - A x||^2` with a fixed step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataConsistency {
    pub steps: usize,
    pub step_size: f64,
}

impl DataConsistency {
    /// Step size `scale / ||A||^2`, with the norm from power iteration.
    pub fn for_geometry(geom: &ProjectionGeometry, steps: usize, scale: f64) -> Result<Self> {
        let l = operator_norm_sq(geom, 50)?;
        if l <= 0.0 {
            return Err(Error::Domain("projector has zero norm".into()));
        }
        Ok(Self {
            steps,
            step_size: scale / l,
        })
    }

    pub fn refine(&self, x: &GridImage, y: &Sinogram) -> Result<GridImage> {
        let mut x = x.clone();
        for _ in 0..self.steps {
            let r = forward_project(&x, y.geometry())?.residual(y)?;
            x.axpy(-self.step_size, &back_project(&r));
        }
        Ok(x)
    }
}

/// `||y - A x||^2`.
pub fn sinogram_residual_sq(x: &GridImage, y: &Sinogram) -> Result<f64> {
    let r = forward_project(x, y.geometry())?.residual(y)?;
    Ok(r.dot(&r))
}

fn check_stack(y: &[Sinogram]) -> Result<&ProjectionGeometry> {
    let first = y.first().ok_or_else(|| Error::Dimension("empty sinogram stack".into()))?;
    if y.iter().any(|s| s.geometry() != first.geometry()) {
        return Err(Error::Dimension("sinograms in a stack must share one geometry".into()));
    }
    Ok(first.geometry())
}

/// FBP of each sinogram, noised to the schedule index of step `T'`.
pub fn init_latent(y_main: &[Sinogram], sched: &NoiseSchedule, config: &SolverConfig) -> Result<GridVolume> {
    config.validate(sched)?;
    check_stack(y_main)?;
    let index = config.schedule_index(config.t_prime);
    let slices = y_main
        .par_iter()
        .enumerate()
        .map(|(k, y)| {
            let fbp = fbp_reconstruct(y, config.fbp_filter)?;
            let mut rng = rng::stream(config.seed, &[tag::INIT_LATENT, k as u64]);
            let eps = gaussian_image(fbp.width(), fbp.height(), &mut rng);
            noising_sample(&fbp, index, &eps, sched)
        })
        .collect::<Result<Vec<_>>>()?;
    GridVolume::new(slices)
}

/// One slice of the DiffSolver: clipped Tweedie estimate, data-consistency
/// steps, clip.
fn predict_slice(
    xt: &GridImage,
    eps: &GridImage,
    index: usize,
    y: &Sinogram,
    sched: &NoiseSchedule,
    dc: &DataConsistency,
) -> Result<GridImage> {
    let x0 = tweedie_from_eps(xt, eps, index, sched)?.clipped(0.0, 1.0);
    Ok(dc.refine(&x0, y)?.clipped(0.0, 1.0))
}

/// The DiffSolver prediction `X_0|t` for every slice at schedule index `index`.
pub fn diff_solver_predict(
    x_t: &GridVolume,
    index: usize,
    model: &(impl NoisePredictor + Sync),
    y_main: &[Sinogram],
    sched: &NoiseSchedule,
    dc: &DataConsistency,
) -> Result<GridVolume> {
    if index == 0 {
        return Err(Error::Domain("prediction needs t >= 1".into()));
    }
    if x_t.depth() != y_main.len() {
        return Err(Error::Dimension(format!(
            "{} slices but {} sinograms",
            x_t.depth(),
            y_main.len()
        )));
    }
    let slices = x_t
        .slices()
        .par_iter()
        .zip(y_main)
        .map(|(xt, y)| predict_slice(xt, &model.predict_eps(xt, index)?, index, y, sched, dc))
        .collect::<Result<Vec<_>>>()?;
    GridVolume::new(slices)
}

/// `sum_k ||y_k - A DiffSolver(x_k)||^2 / K` over a slice batch.
pub fn data_consistency_loss(
    x: &[GridImage],
    y: &[Sinogram],
    model: &(impl NoisePredictor + Sync),
    index: usize,
    sched: &NoiseSchedule,
    dc: &DataConsistency,
) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Dimension(format!("{} slices vs {} sinograms", x.len(), y.len())));
    }
    let terms = x
        .par_iter()
        .zip(y)
        .map(|(xt, ys)| {
            let pred = predict_slice(xt, &model.predict_eps(xt, index)?, index, ys, sched, dc)?;
            sinogram_residual_sq(&pred, ys)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(terms.iter().sum::<f64>() / x.len() as f64)
}

/// Loss and parameter gradient for one slice of an adaptation minibatch.
///
/// The gradient flows through the single denoiser call; the data-consistency
/// steps are treated as a constant offset, and the two clips pass gradient
/// only where they were inactive.
fn slice_loss_grad(
    params: &DenoiserParams,
    xt: &GridImage,
    y: &Sinogram,
    index: usize,
    sched: &NoiseSchedule,
    dc: &DataConsistency,
    batch: usize,
) -> Result<(f64, Vec<f32>)> {
    let ab = sched.alpha_bar(index);
    let deps = -(1.0 - ab).sqrt() / ab.sqrt();
    params.eps_with_grad(xt, index, |eps| {
        let raw = tweedie_from_eps(xt, eps, index, sched)?;
        let x0 = raw.clipped(0.0, 1.0);
        let refined = dc.refine(&x0, y)?;
        let pred = refined.clipped(0.0, 1.0);
        let r = forward_project(&pred, y.geometry())?.residual(y)?;
        let loss = r.dot(&r) / batch as f64;
        let g = back_project(&r);
        let inside = |v: f64| (0.0..=1.0).contains(&v);
        let grad: Vec<f64> = g
            .values()
            .iter()
            .zip(raw.values())
            .zip(refined.values())
            .map(|((&gv, &a), &b)| {
                if inside(a) && inside(b) {
                    2.0 * gv / batch as f64 * deps
                } else {
                    0.0
                }
            })
            .collect();
        Ok((loss, GridImage::from_vec(eps.width(), eps.height(), grad)?))
    })
}

/// `Num_steps` SGD steps on the data-consistency loss over random slice
/// minibatches. Returns the adapted parameters and the loss before each step.
///
/// The minibatch for inner iteration `i` at solver step `t` is drawn from
/// `mix(seed, [MINIBATCH, t, i])`.
#[allow(clippy::too_many_arguments)]
pub fn adapt_weights(
    params: &DenoiserParams,
    x_t: &GridVolume,
    y_main: &[Sinogram],
    t: usize,
    sched: &NoiseSchedule,
    config: &SolverConfig,
    dc: &DataConsistency,
) -> Result<(DenoiserParams, Vec<f64>)> {
    let depth = x_t.depth();
    if config.minibatch_k > depth {
        return Err(Error::Config(format!(
            "minibatch_k {} exceeds {depth} slices",
            config.minibatch_k
        )));
    }
    let index = config.schedule_index(t);
    let mut current = params.clone();
    let mut losses = Vec::with_capacity(config.num_adapt_steps);
    let lr = config.adapt_lr as f32;
    for i in 0..config.num_adapt_steps {
        let mut rng = rng::stream(config.seed, &[tag::MINIBATCH, t as u64, i as u64]);
        let picks = index::sample(&mut rng, depth, config.minibatch_k).into_vec();
        let parts = picks
            .par_iter()
            .map(|&k| slice_loss_grad(&current, x_t.slice(k), &y_main[k], index, sched, dc, config.minibatch_k))
            .collect::<Result<Vec<_>>>()?;
        let loss: f64 = parts.iter().map(|p| p.0).sum();
        let mut grad = vec![0.0f32; current.theta().len()];
        for (_, g) in &parts {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += *b;
            }
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Adaptation { step: i });
        }
        losses.push(loss);
        if lr != 0.0 {
            for (p, g) in current.theta_mut().iter_mut().zip(&grad) {
                *p -= lr * g;
            }
        }
    }
    Ok((current, losses))
}

/// Loop state; survives a failed step so the partial trace can be inspected.
#[derive(Debug, Clone)]
pub struct SolverState {
    /// Next solver step to run; 0 once finished.
    pub t: usize,
    pub latent: GridVolume,
    pub theta: DenoiserParams,
    pub trace: Trace,
}

/// Inputs that stay fixed through a run.
pub struct Problem<'a> {
    pub y_main: &'a [Sinogram],
    /// Degraded auxiliary image per slice; required when refinement is on.
    pub y_aux: Option<&'a GridVolume>,
    pub sched: &'a NoiseSchedule,
    pub config: &'a SolverConfig,
    pub refiner: Option<&'a dyn Refiner>,
    /// Ground truth, only used to log PSNR in the trace.
    pub truth: Option<&'a GridVolume>,
}

impl Problem<'_> {
    fn check(&self) -> Result<()> {
        self.config.validate(self.sched)?;
        let geom = check_stack(self.y_main)?;
        let depth = self.y_main.len();
        if self.config.crossmodal_enabled {
            let aux = self
                .y_aux
                .ok_or_else(|| Error::Config("cross-modal refinement needs an auxiliary volume".into()))?;
            if self.refiner.is_none() {
                return Err(Error::Config("cross-modal refinement needs a translation model".into()));
            }
            if aux.depth() != depth || aux.width() != geom.image_side() || aux.height() != geom.image_side() {
                return Err(Error::Dimension("auxiliary volume does not match the measurements".into()));
            }
        }
        if let Some(truth) = self.truth {
            if truth.depth() != depth || truth.width() != geom.image_side() {
                return Err(Error::Dimension("ground truth does not match the measurements".into()));
            }
        }
        Ok(())
    }
}

/// Runs the full loop from `state` (as produced by [`start`]) down to `t = 0`.
/// On error the state holds everything completed so far.
pub fn run(problem: &Problem<'_>, state: &mut SolverState) -> Result<GridVolume> {
    problem.check()?;
    let config = problem.config;
    let sched = problem.sched;
    let dc = DataConsistency::for_geometry(problem.y_main[0].geometry(), config.inner_dc_steps, config.dc_step_scale)?;
    let mut estimate = None;
    while state.t >= 1 {
        let t = state.t;
        let index = config.schedule_index(t);
        let (theta, losses) = adapt_weights(&state.theta, &state.latent, problem.y_main, t, sched, config, &dc)?;
        state.theta = theta;
        let mut x0 = diff_solver_predict(&state.latent, index, &state.theta, problem.y_main, sched, &dc)?;
        let refined = config.crossmodal_enabled && config.cadence(t);
        if refined {
            let (aux, refiner) = (problem.y_aux.expect("checked"), problem.refiner.expect("checked"));
            let slices = x0
                .slices()
                .par_iter()
                .zip(aux.slices())
                .map(|(x, a)| refiner.refine(x, a))
                .collect::<Result<Vec<_>>>()?;
            x0 = GridVolume::new(slices)?;
        }
        let next = config.schedule_index(t - 1);
        let latent = x0
            .slices()
            .par_iter()
            .enumerate()
            .map(|(k, x)| renoise(x, next, rng::mix(config.seed, &[tag::RENOISE, t as u64, k as u64]), sched))
            .collect::<Result<Vec<_>>>()?;
        let residual = x0
            .slices()
            .iter()
            .zip(problem.y_main)
            .map(|(x, y)| sinogram_residual_sq(x, y))
            .sum::<Result<f64>>()?;
        let psnr = match problem.truth {
            Some(truth) => Some(metrics::MetricReport::evaluate(&x0, truth, 1.0)?.mean_psnr()),
            None => None,
        };
        state.trace.push(StepRecord {
            t,
            schedule_index: index,
            adapt_losses: losses,
            refined,
            residual,
            psnr,
        });
        state.latent = GridVolume::new(latent)?;
        state.t = t - 1;
        estimate = Some(x0);
    }
    estimate.ok_or_else(|| Error::Domain("solver already finished".into()))
}

/// Initial state: `theta0` copied, latent from [`init_latent`].
pub fn start(y_main: &[Sinogram], theta0: &DenoiserParams, sched: &NoiseSchedule, config: &SolverConfig) -> Result<SolverState> {
    Ok(SolverState {
        t: config.t_prime,
        latent: init_latent(y_main, sched, config)?,
        theta: theta0.clone(),
        trace: Trace::default(),
    })
}

/// Full reconstruction: [`start`] then [`run`].
pub fn reconstruct(problem: &Problem<'_>, theta0: &DenoiserParams) -> Result<(GridVolume, SolverState)> {
    problem.check()?;
    let mut state = start(problem.y_main, theta0, problem.sched, problem.config)?;
    let out = run(problem, &mut state)?;
    Ok((out, state))
}
