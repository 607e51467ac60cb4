use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::degrade::{spec_product, DegradationSpec};
use crate::diffusion::{make_schedule, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_TIMESTEPS};
use crate::error::{Error, Result};
use crate::nn::{OptimizerKind, TrainConfig, UNetConfig};
use crate::phantoms::PhantomRecipe;
use crate::solver::SolverConfig;
use crate::tomo::{FilterKind, ProjectionGeometry};
use crate::xmodal::TranslationConfig;

/// One file fully determines an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub workers: usize,
    pub seeds: Seeds,
    pub phantom: PhantomRecipe,
    pub geometry: GeometryConfig,
    pub data: DataConfig,
    pub aux: DegradationSpec,
    pub schedule: ScheduleConfig,
    pub prior: PriorConfig,
    pub xmodal: XmodalConfig,
    pub solver: SolverSection,
    pub sweep: SweepConfig,
    pub report: ReportConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub data: u64,
    pub prior: u64,
    pub xmodal: u64,
    pub solver: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 0,
            prior: 1,
            xmodal: 2,
            solver: 3,
        }
    }
}

impl Seeds {
    /// Shifts every seed by `root`; `--seed` overrides through this.
    pub fn rooted(root: u64) -> Self {
        let d = Self::default();
        Self {
            data: crate::rng::mix(root, &[d.data]),
            prior: crate::rng::mix(root, &[d.prior]),
            xmodal: crate::rng::mix(root, &[d.xmodal]),
            solver: crate::rng::mix(root, &[d.solver]),
        }
    }
}

/// Parallel-beam acquisition: detector bins `ceil(side * sqrt 2)`, unit
/// pitches, angles uniform on `[0, pi)`. Only the FBP filter is configurable.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub filter: FilterKind,
}

impl GeometryConfig {
    pub fn build(&self, side: usize, views: usize) -> Result<ProjectionGeometry> {
        ProjectionGeometry::parallel(side, views)
    }
}

/// Axes of a degradation grid; every combination is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecAxes {
    pub views: Vec<usize>,
    #[serde(default = "zero_list")]
    pub noise: Vec<f64>,
    #[serde(default = "zero_list")]
    pub blur: Vec<f64>,
    #[serde(default = "one_list")]
    pub keep: Vec<f64>,
}

fn zero_list() -> Vec<f64> {
    vec![0.0]
}

fn one_list() -> Vec<f64> {
    vec![1.0]
}

impl SpecAxes {
    pub fn specs(&self) -> Vec<DegradationSpec> {
        spec_product(&self.views, &self.noise, &self.blur, &self.keep)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_volumes: usize,
    pub test_volumes: usize,
    pub prior_slices: usize,
    pub paired_samples: usize,
    pub validation_fraction: f64,
    /// View count of the ideal reference; noiseless, unblurred, dense.
    pub ideal_views: usize,
    pub main_grid: SpecAxes,
    pub aux_grid: SpecAxes,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_volumes: 10,
            test_volumes: 3,
            prior_slices: 512,
            paired_samples: 480,
            validation_fraction: 0.1,
            ideal_views: 256,
            main_grid: SpecAxes {
                views: vec![8, 16, 32, 64],
                noise: vec![0.0, 0.05],
                blur: vec![0.0, 1.0],
                keep: vec![1.0],
            },
            aux_grid: SpecAxes {
                views: vec![48, 64, 96],
                noise: vec![0.03, 0.05],
                blur: vec![1.0],
                keep: vec![1.0],
            },
        }
    }
}

impl DataConfig {
    /// Every main spec paired with every aux spec.
    pub fn spec_grid(&self) -> Vec<(DegradationSpec, DegradationSpec)> {
        let aux = self.aux_grid.specs();
        self.main_grid
            .specs()
            .into_iter()
            .flat_map(|m| aux.iter().map(move |a| (m, *a)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            timesteps: DEFAULT_TIMESTEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.timesteps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    pub time_embed_dim: usize,
    /// Largest training timestep; defaults to the solver's schedule_start.
    pub t_max: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub max_steps: Option<u64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            base_channels: 8,
            channel_mults: vec![1, 2, 2],
            time_embed_dim: 32,
            t_max: None,
            epochs: 10,
            batch_size: 8,
            lr: 2e-3,
            optimizer: OptimizerKind::Adam,
            max_steps: None,
        }
    }
}

impl PriorConfig {
    pub fn arch(&self) -> UNetConfig {
        UNetConfig {
            in_channels: 1,
            out_channels: 1,
            base_channels: self.base_channels,
            channel_mults: self.channel_mults.clone(),
            time_embed_dim: self.time_embed_dim,
        }
    }

    pub fn train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            optimizer: self.optimizer,
            seed,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XmodalConfig {
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub max_steps: Option<u64>,
    pub adversarial_weight: f64,
    pub discriminator_channels: usize,
    pub discriminator_lr: f64,
}

impl Default for XmodalConfig {
    fn default() -> Self {
        let t = TranslationConfig::default();
        Self {
            base_channels: 8,
            channel_mults: vec![1, 2, 2],
            epochs: 10,
            batch_size: 8,
            lr: 2e-3,
            optimizer: OptimizerKind::Adam,
            max_steps: None,
            adversarial_weight: t.adversarial_weight,
            discriminator_channels: t.discriminator_channels,
            discriminator_lr: t.discriminator_lr,
        }
    }
}

impl XmodalConfig {
    pub fn arch(&self) -> UNetConfig {
        UNetConfig {
            in_channels: 2,
            out_channels: 1,
            base_channels: self.base_channels,
            channel_mults: self.channel_mults.clone(),
            time_embed_dim: 0,
        }
    }

    pub fn train(&self, seed: u64) -> TranslationConfig {
        TranslationConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            optimizer: self.optimizer,
            seed,
            max_steps: self.max_steps,
            adversarial_weight: self.adversarial_weight,
            discriminator_channels: self.discriminator_channels,
            discriminator_lr: self.discriminator_lr,
        }
    }
}

/// Solver settings shared by every sweep cell; steps, mode and seed come
/// from the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub t_prime: usize,
    pub adapt_lr: f64,
    pub minibatch_k: usize,
    pub crossmodal_period: usize,
    pub crossmodal_min_t: usize,
    pub inner_dc_steps: usize,
    pub dc_step_scale: f64,
    pub schedule_start: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            t_prime: s.t_prime,
            adapt_lr: s.adapt_lr,
            minibatch_k: s.minibatch_k,
            crossmodal_period: s.crossmodal_period,
            crossmodal_min_t: s.crossmodal_min_t,
            inner_dc_steps: s.inner_dc_steps,
            dc_step_scale: s.dc_step_scale,
            schedule_start: s.schedule_start,
        }
    }
}

impl SolverSection {
    pub fn build(&self, num_adapt_steps: usize, crossmodal: bool, filter: FilterKind, seed: u64) -> SolverConfig {
        SolverConfig {
            t_prime: self.t_prime,
            num_adapt_steps,
            adapt_lr: self.adapt_lr,
            minibatch_k: self.minibatch_k,
            crossmodal_enabled: crossmodal,
            crossmodal_period: self.crossmodal_period,
            crossmodal_min_t: self.crossmodal_min_t,
            inner_dc_steps: self.inner_dc_steps,
            dc_step_scale: self.dc_step_scale,
            schedule_start: self.schedule_start,
            fbp_filter: filter,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Unimodal,
    Crossmodal,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Unimodal => "unimodal",
            Mode::Crossmodal => "crossmodal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unimodal" => Some(Mode::Unimodal),
            "crossmodal" => Some(Mode::Crossmodal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub views: Vec<usize>,
    pub num_steps: Vec<usize>,
    pub noise: Vec<f64>,
    pub modes: Vec<Mode>,
    /// Optional cap on how many test volumes enter the sweep.
    pub volumes: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            views: vec![8, 16, 32, 64, 128, 256],
            num_steps: vec![5, 10],
            noise: vec![0.0],
            modes: vec![Mode::Unimodal, Mode::Crossmodal],
            volumes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Slices dumped as PGM triptychs; empty picks the middle slice.
    pub dump_slices: Vec<usize>,
    /// Decimal places in the tables.
    pub precision: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            dump_slices: Vec::new(),
            precision: 3,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/desk"),
            workers: 1,
            seeds: Seeds::default(),
            phantom: PhantomRecipe::default(),
            geometry: GeometryConfig::default(),
            data: DataConfig::default(),
            aux: DegradationSpec {
                num_views: 64,
                noise_relative_sigma: 0.05,
                blur_sigma: 1.0,
                sampling_keep_fraction: 1.0,
                seed: 0,
            },
            schedule: ScheduleConfig::default(),
            prior: PriorConfig::default(),
            xmodal: XmodalConfig::default(),
            solver: SolverSection::default(),
            sweep: SweepConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML; unknown or malformed fields are reported by name and line.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn prior_t_max(&self) -> usize {
        self.prior.t_max.unwrap_or(self.solver.schedule_start)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: Error| match e {
            Error::Config(msg) => Error::Config(format!("[{name}] {msg}")),
            other => other,
        };
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.phantom.validate().map_err(|e| field("phantom", e))?;
        let side = self.phantom.volume_side;
        self.geometry.build(side, 2).map_err(|e| field("geometry", e))?;
        self.aux.validate().map_err(|e| field("aux", e))?;
        let sched = self.schedule.build().map_err(|e| field("schedule", e))?;
        let d = &self.data;
        if !(0.0..1.0).contains(&d.validation_fraction) {
            return Err(Error::Config("[data] validation_fraction must lie in [0, 1)".into()));
        }
        DegradationSpec::ideal(d.ideal_views).validate().map_err(|e| field("data", e))?;
        for (name, axes) in [("data.main_grid", &d.main_grid), ("data.aux_grid", &d.aux_grid)] {
            if axes.views.is_empty() || axes.noise.is_empty() || axes.blur.is_empty() || axes.keep.is_empty() {
                return Err(Error::Config(format!("[{name}] every axis needs at least one value")));
            }
            for s in axes.specs() {
                s.validate().map_err(|e| field(name, e))?;
            }
        }
        self.solver
            .build(1, false, self.geometry.filter, 0)
            .validate(&sched)
            .map_err(|e| field("solver", e))?;
        if self.solver.minibatch_k > self.phantom.depth {
            return Err(Error::Config(format!(
                "[solver] minibatch_k {} exceeds the volume depth {}",
                self.solver.minibatch_k, self.phantom.depth
            )));
        }
        let t_max = self.prior_t_max();
        if t_max == 0 || t_max > sched.len() {
            return Err(Error::Config(format!("[prior] t_max {t_max} outside [1, {}]", sched.len())));
        }
        self.prior.train(0).validate().map_err(|e| field("prior", e))?;
        crate::nn::UNet::new(self.prior.arch()).map_err(|e| field("prior", e))?;
        self.xmodal.train(0).validate().map_err(|e| field("xmodal", e))?;
        let xnet = crate::nn::UNet::new(self.xmodal.arch()).map_err(|e| field("xmodal", e))?;
        if side % xnet.size_multiple() != 0 {
            return Err(Error::Config(format!(
                "[xmodal] volume_side {side} is not a multiple of {}",
                xnet.size_multiple()
            )));
        }
        let s = &self.sweep;
        if s.views.is_empty() || s.num_steps.is_empty() || s.noise.is_empty() || s.modes.is_empty() {
            return Err(Error::Config("[sweep] views, num_steps, noise and modes must be non-empty".into()));
        }
        if s.views.iter().any(|&v| v < 2) {
            return Err(Error::Config("[sweep] every view count must be at least 2".into()));
        }
        if s.noise.iter().any(|n| !(n.is_finite() && *n >= 0.0)) {
            return Err(Error::Config("[sweep] noise levels must be finite and >= 0".into()));
        }
        if s.volumes == Some(0) {
            return Err(Error::Config("[sweep] volumes must be at least 1 when set".into()));
        }
        Ok(())
    }
}
