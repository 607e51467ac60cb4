//! Experiment orchestration: dataset generation, prior and translator
//! training, reconstruction sweeps, evaluation and reporting. Every command
//! reads and writes under one output root (see [`Layout`]).

mod config;
mod files;
mod report;

pub use config::{
    DataConfig, ExperimentConfig, GeometryConfig, Mode, PriorConfig, ReportConfig, ScheduleConfig, Seeds, SolverSection,
    SpecAxes, SweepConfig, XmodalConfig,
};
pub use files::{encode_pgm, Layout, Manifest, Record};
pub use report::{ReportRow, ReportTable};

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::degrade::{build_paired_dataset, degraded_reconstruction, DegradationSpec, PairedSample};
use crate::diffusion::{train_denoiser_from, DenoiserParams, NoiseSchedule};
use crate::error::{Error, Result};
use crate::grid::{GridImage, GridVolume};
use crate::io::{self, Dtype, Resume};
use crate::metrics::{self, MetricReport};
use crate::nn::{TrainLog, TrainState, UNet};
use crate::phantoms::{generate_paired_volume, sample_prior_slice};
use crate::rng::{self, tag};
use crate::solver::{self, Problem, Refiner};
use crate::tomo::{add_noise, forward_project, Sinogram};
use crate::xmodal::{self, TranslationModel};

/// One reconstruction of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub volume: usize,
    pub views: usize,
    pub steps: usize,
    pub noise: f64,
    pub mode: Mode,
}

impl Cell {
    pub fn id(&self) -> String {
        format!(
            "vol{:03}_views{:03}_steps{:02}_noise{}_{}",
            self.volume,
            self.views,
            self.steps,
            self.noise,
            self.mode.name()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub cell: Cell,
    /// `None` on success, otherwise the error message.
    pub failure: Option<String>,
}

/// Translator quality on the held-out split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationSummary {
    pub pairs: usize,
    pub improved: usize,
    pub mean_psnr_input: f64,
    pub mean_psnr_output: f64,
}

impl ValidationSummary {
    pub fn improved_fraction(&self) -> f64 {
        self.improved as f64 / self.pairs.max(1) as f64
    }
}

pub struct Harness {
    config: ExperimentConfig,
    layout: Layout,
}

/// CSV fields never contain commas; messages are sanitized.
fn csv_safe(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io::write_atomic(path, text.as_bytes())
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().from_writer(Vec::new())
}

fn csv_finish(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<()> {
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    io::write_atomic(path, &bytes)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::format(path, e.to_string())
}

fn read_csv(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    })?;
    r.records().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(path, format!("malformed column {i} in `{}`", rec.iter().collect::<Vec<_>>().join(","))))
}

impl Harness {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config.out_dir.clone());
        Ok(Self { config, layout })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", self.config.workers)))
    }

    fn data_path(&self, rel: &str) -> PathBuf {
        self.layout.data_dir().join(rel)
    }

    fn manifest(&self) -> Result<Manifest> {
        Manifest::load(&self.layout.manifest())
    }

    /// Writes train/test volume pairs, prior training slices, the paired
    /// translation dataset and a manifest, all determined by `seeds.data`.
    pub fn generate_data(&self) -> Result<Manifest> {
        self.pool()?.install(|| self.generate_data_inner())
    }

    fn generate_data_inner(&self) -> Result<Manifest> {
        let c = &self.config;
        let d = &c.data;
        let seed = c.seeds.data;
        let mut manifest = Manifest::default();

        let splits = [("train", 0u64, d.train_volumes), ("test", 1u64, d.test_volumes)];
        let jobs: Vec<(&str, u64, usize)> = splits
            .iter()
            .flat_map(|&(name, code, n)| (0..n).map(move |i| (name, code, i)))
            .collect();
        let records = jobs
            .par_iter()
            .map(|&(name, code, i)| {
                let vseed = rng::mix(seed, &[tag::PHANTOM, code, i as u64]);
                let (main, aux) = generate_paired_volume(&c.phantom, vseed)?;
                let main_rel = format!("{name}/vol{i:03}_main.grid");
                let aux_rel = format!("{name}/vol{i:03}_aux.grid");
                io::write_grid(&self.data_path(&main_rel), &main, Dtype::F32)?;
                io::write_grid(&self.data_path(&aux_rel), &aux, Dtype::F32)?;
                Ok(Record::new("volume")
                    .with("split", name)
                    .with("index", i)
                    .with("seed", vseed)
                    .with("main", main_rel)
                    .with("aux", aux_rel))
            })
            .collect::<Result<Vec<_>>>()?;
        records.into_iter().for_each(|r| manifest.push(r));

        if d.prior_slices > 0 {
            let slices = (0..d.prior_slices)
                .into_par_iter()
                .map(|i| sample_prior_slice(&c.phantom, rng::mix(seed, &[tag::PRIOR_SLICE, i as u64])))
                .collect::<Result<Vec<_>>>()?;
            let rel = "prior_slices.grid";
            io::write_grid(&self.data_path(rel), &GridVolume::new(slices)?, Dtype::F32)?;
            manifest.push(Record::new("prior_slices").with("count", d.prior_slices).with("file", rel));
        }

        if d.paired_samples > 0 {
            let samples = build_paired_dataset(
                &c.phantom,
                &DegradationSpec::ideal(d.ideal_views),
                &d.spec_grid(),
                d.paired_samples,
                rng::mix(seed, &[tag::DATASET]),
                c.geometry.filter,
            )?;
            let stack = |f: fn(&PairedSample) -> &GridImage| GridVolume::new(samples.iter().map(|s| f(s).clone()).collect());
            let files = [
                ("degraded_main", stack(|s| &s.degraded_main)?),
                ("degraded_aux", stack(|s| &s.degraded_aux)?),
                ("ideal_main", stack(|s| &s.ideal_main)?),
            ];
            let mut rec = Record::new("paired_files").with("count", samples.len());
            for (name, vol) in &files {
                let rel = format!("paired/{name}.grid");
                io::write_grid(&self.data_path(&rel), vol, Dtype::F32)?;
                rec = rec.with(name, rel);
            }
            manifest.push(rec);
            for (i, s) in samples.iter().enumerate() {
                let mut r = Record::new("paired").with("index", i);
                for (prefix, spec) in [("main", &s.spec_main), ("aux", &s.spec_aux)] {
                    r = r
                        .with(&format!("{prefix}_views"), spec.num_views)
                        .with(&format!("{prefix}_noise"), spec.noise_relative_sigma)
                        .with(&format!("{prefix}_blur"), spec.blur_sigma)
                        .with(&format!("{prefix}_keep"), spec.sampling_keep_fraction)
                        .with(&format!("{prefix}_seed"), spec.seed);
                }
                manifest.push(r);
            }
        }
        write_text(&self.layout.manifest(), &manifest.to_text())?;
        log::info!("wrote {} manifest records to {}", manifest.records.len(), self.layout.manifest().display());
        Ok(manifest)
    }

    fn load_prior_slices(&self) -> Result<Vec<GridImage>> {
        let manifest = self.manifest()?;
        let rec = manifest
            .of_kind("prior_slices")
            .next()
            .ok_or_else(|| Error::Config(format!("{} lists no prior training slices", self.layout.manifest().display())))?;
        Ok(io::read_grid(&self.data_path(rec.require("file")?))?.into_slices())
    }

    /// Loads the paired dataset recorded in the manifest.
    pub fn load_paired(&self) -> Result<Vec<PairedSample>> {
        let manifest = self.manifest()?;
        let files = manifest
            .of_kind("paired_files")
            .next()
            .ok_or_else(|| Error::Config(format!("{} lists no paired dataset", self.layout.manifest().display())))?;
        let load = |k: &str| -> Result<Vec<GridImage>> { Ok(io::read_grid(&self.data_path(files.require(k)?))?.into_slices()) };
        let (dm, da, im) = (load("degraded_main")?, load("degraded_aux")?, load("ideal_main")?);
        let spec = |r: &Record, p: &str| -> Result<DegradationSpec> {
            Ok(DegradationSpec {
                num_views: r.parse(&format!("{p}_views"))?,
                noise_relative_sigma: r.parse(&format!("{p}_noise"))?,
                blur_sigma: r.parse(&format!("{p}_blur"))?,
                sampling_keep_fraction: r.parse(&format!("{p}_keep"))?,
                seed: r.parse(&format!("{p}_seed"))?,
            })
        };
        let recs: Vec<&Record> = manifest.of_kind("paired").collect();
        if recs.len() != dm.len() || da.len() != dm.len() || im.len() != dm.len() {
            return Err(Error::format(self.layout.manifest(), "paired records and grid files disagree in count"));
        }
        recs.iter()
            .zip(dm.into_iter().zip(da).zip(im))
            .map(|(r, ((m, a), i))| {
                Ok(PairedSample {
                    degraded_main: m,
                    degraded_aux: a,
                    ideal_main: i,
                    spec_main: spec(r, "main")?,
                    spec_aux: spec(r, "aux")?,
                })
            })
            .collect()
    }

    /// Test volumes as (main, aux) pairs, capped by `sweep.volumes`.
    pub fn load_test_volumes(&self) -> Result<Vec<(GridVolume, GridVolume)>> {
        let manifest = self.manifest()?;
        let mut vols: Vec<&Record> = manifest.of_kind("volume").filter(|r| r.get("split") == Some("test")).collect();
        vols.sort_by_key(|r| r.parse::<usize>("index").unwrap_or(usize::MAX));
        if let Some(cap) = self.config.sweep.volumes {
            vols.truncate(cap);
        }
        vols.iter()
            .map(|r| {
                Ok((
                    io::read_grid(&self.data_path(r.require("main")?))?,
                    io::read_grid(&self.data_path(r.require("aux")?))?,
                ))
            })
            .collect()
    }

    fn append_losses(&self, path: &Path, first_step: u64, log: &TrainLog) -> Result<()> {
        let mut w = csv_writer();
        w.write_record(["step", "loss"]).map_err(csv_err(path))?;
        if first_step > 0 && path.exists() {
            for rec in read_csv(path)? {
                let step: u64 = field(&rec, 0, path)?;
                if step < first_step {
                    w.write_record(&rec).map_err(csv_err(path))?;
                }
            }
        }
        for (i, l) in log.step_losses.iter().enumerate() {
            w.write_record([(first_step + i as u64).to_string(), format!("{l:e}")])
                .map_err(csv_err(path))?;
        }
        csv_finish(path, w)
    }

    fn schedule(&self) -> Result<NoiseSchedule> {
        self.config.schedule.build()
    }

    /// Trains the diffusion prior on the generated prior slices. With
    /// `resume`, continues from the saved optimizer state.
    pub fn train_prior(&self, resume: bool) -> Result<TrainLog> {
        self.pool()?.install(|| self.train_prior_inner(resume))
    }

    fn train_prior_inner(&self, resume: bool) -> Result<TrainLog> {
        let c = &self.config;
        let slices = self.load_prior_slices()?;
        let sched = self.schedule()?;
        let arch = c.prior.arch();
        let net = UNet::new(arch.clone())?;
        let ckpt = self.layout.prior_checkpoint();
        let state = if resume && ckpt.exists() {
            let (params, saved, state) = io::load_denoiser(&ckpt)?;
            if saved != sched || params.arch() != &arch {
                return Err(Error::Config(format!("{} was trained with a different schedule or architecture", ckpt.display())));
            }
            state.ok_or_else(|| Error::Config(format!("{} holds no training state to resume", ckpt.display())))?
        } else {
            TrainState::new(net.init_params(c.seeds.prior))
        };
        let first = state.step;
        let train = c.prior.train(c.seeds.prior);
        let (state, log) = match train_denoiser_from(&slices, &sched, &train, Some(c.prior_t_max()), &net, state) {
            Ok(r) => r,
            Err(Error::Training { step, last_finite }) => {
                let p = DenoiserParams::new(arch, last_finite.clone())?;
                io::save_denoiser(&self.layout.models_dir().join("prior_last_finite.ckpt"), &p, &sched, None)?;
                return Err(Error::Training { step, last_finite });
            }
            Err(e) => return Err(e),
        };
        let params = DenoiserParams::new(arch, state.theta.clone())?;
        io::save_denoiser(
            &ckpt,
            &params,
            &sched,
            Some(Resume {
                kind: train.optimizer,
                state: &state,
            }),
        )?;
        self.append_losses(&self.layout.models_dir().join("prior_loss.csv"), first, &log)?;
        log::info!("prior trained to step {}", state.step);
        Ok(log)
    }

    /// Trains the translator on the paired dataset's training split and scores
    /// it on the validation split.
    pub fn train_xmodal(&self, resume: bool) -> Result<ValidationSummary> {
        self.pool()?.install(|| self.train_xmodal_inner(resume))
    }

    fn split(&self, n: usize) -> (Vec<usize>, Vec<usize>) {
        xmodal::validation_split(n, self.config.data.validation_fraction, self.config.seeds.xmodal)
    }

    fn train_xmodal_inner(&self, resume: bool) -> Result<ValidationSummary> {
        let c = &self.config;
        let data = self.load_paired()?;
        let (train_idx, val_idx) = self.split(data.len());
        let train: Vec<PairedSample> = train_idx.iter().map(|&i| data[i].clone()).collect();
        let tcfg = c.xmodal.train(c.seeds.xmodal);
        let arch = c.xmodal.arch();
        let side = c.phantom.volume_side;
        let ckpt = self.layout.xmodal_checkpoint();
        let (model, log, first) = if tcfg.adversarial_weight > 0.0 {
            let init = TranslationModel::init(arch, side, c.seeds.xmodal)?;
            let (m, log) = xmodal::train_translation(&train, &tcfg, init)?;
            (m, log, 0)
        } else {
            let net = UNet::new(arch.clone())?;
            let state = if resume && ckpt.exists() {
                let (m, state) = io::load_translator(&ckpt)?;
                if m.arch() != &arch || m.resolution() != side {
                    return Err(Error::Config(format!("{} has a different architecture", ckpt.display())));
                }
                state.ok_or_else(|| Error::Config(format!("{} holds no training state to resume", ckpt.display())))?
            } else {
                TrainState::new(net.init_params(c.seeds.xmodal))
            };
            let first = state.step;
            let (state, log) = xmodal::train_translation_from(&train, &tcfg, &net, state)?;
            let m = TranslationModel::new(arch, state.theta.clone(), side, tcfg.clone())?;
            io::save_translator(
                &ckpt,
                &m,
                Some(Resume {
                    kind: tcfg.optimizer,
                    state: &state,
                }),
            )?;
            (m, log, first)
        };
        if tcfg.adversarial_weight > 0.0 {
            io::save_translator(&ckpt, &model, None)?;
        }
        self.append_losses(&self.layout.models_dir().join("xmodal_loss.csv"), first, &log)?;
        self.validate_translator(&model, &data, &val_idx)
    }

    fn validate_translator(&self, model: &TranslationModel, data: &[PairedSample], val: &[usize]) -> Result<ValidationSummary> {
        let rows = val
            .par_iter()
            .map(|&i| {
                let s = &data[i];
                let before = metrics::psnr(&s.degraded_main.clipped(0.0, 1.0), &s.ideal_main, 1.0)?;
                let out = xmodal::apply_translation(model, &s.degraded_main, &s.degraded_aux)?;
                let after = metrics::psnr(&out, &s.ideal_main, 1.0)?;
                Ok((i, before, after))
            })
            .collect::<Result<Vec<_>>>()?;
        let path = self.layout.models_dir().join("xmodal_validation.csv");
        let mut w = csv_writer();
        w.write_record(["index", "psnr_input", "psnr_output", "improved"]).map_err(csv_err(&path))?;
        for (i, b, a) in &rows {
            w.write_record([i.to_string(), format!("{b:.6}"), format!("{a:.6}"), ((a >= b) as u8).to_string()])
                .map_err(csv_err(&path))?;
        }
        csv_finish(&path, w)?;
        let before: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let after: Vec<f64> = rows.iter().map(|r| r.2).collect();
        Ok(ValidationSummary {
            pairs: rows.len(),
            improved: rows.iter().filter(|r| r.2 >= r.1).count(),
            mean_psnr_input: metrics::mean(&before),
            mean_psnr_output: metrics::mean(&after),
        })
    }

    /// Every sweep cell, in report order.
    pub fn cells(&self, volumes: usize) -> Vec<Cell> {
        let s = &self.config.sweep;
        let mut out = Vec::new();
        for volume in 0..volumes {
            for &noise in &s.noise {
                for &steps in &s.num_steps {
                    for &views in &s.views {
                        for &mode in &s.modes {
                            out.push(Cell {
                                volume,
                                views,
                                steps,
                                noise,
                                mode,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn cell_dir(&self, cell: &Cell) -> PathBuf {
        self.layout.recon_dir().join(cell.id())
    }

    /// Main-modality measurements of a test volume. Independent of mode and
    /// step count, so paired cells see identical bytes.
    pub fn measurements(&self, main: &GridVolume, volume: usize, views: usize, noise: f64) -> Result<Vec<Sinogram>> {
        let geom = self.config.geometry.build(main.width(), views)?;
        main.slices()
            .par_iter()
            .enumerate()
            .map(|(k, s)| {
                let y = forward_project(s, &geom)?;
                let seed = rng::mix(self.config.seeds.data, &[tag::NOISE, volume as u64, views as u64, noise.to_bits(), k as u64]);
                add_noise(&y, noise, seed)
            })
            .collect()
    }

    /// Degraded auxiliary reconstruction of a test volume per the `[aux]` spec.
    pub fn aux_image(&self, aux: &GridVolume, volume: usize) -> Result<GridVolume> {
        let slices = aux
            .slices()
            .par_iter()
            .enumerate()
            .map(|(k, s)| {
                let seed = rng::mix(self.config.seeds.data, &[tag::AUX, volume as u64, k as u64]);
                degraded_reconstruction(s, &self.config.aux.with_seed(seed), self.config.geometry.filter)
            })
            .collect::<Result<Vec<_>>>()?;
        GridVolume::new(slices)
    }

    /// Runs every sweep cell. A failing cell is recorded and skipped.
    pub fn reconstruct(&self) -> Result<Vec<CellOutcome>> {
        self.pool()?.install(|| self.reconstruct_inner())
    }

    fn reconstruct_inner(&self) -> Result<Vec<CellOutcome>> {
        let c = &self.config;
        let vols = self.load_test_volumes()?;
        let (prior, sched, _) = io::load_denoiser(&self.layout.prior_checkpoint())?;
        if sched != self.schedule()? {
            return Err(Error::Config("prior checkpoint schedule differs from [schedule]".into()));
        }
        let translator = if c.sweep.modes.contains(&Mode::Crossmodal) {
            Some(io::load_translator(&self.layout.xmodal_checkpoint())?.0)
        } else {
            None
        };
        let aux: Vec<GridVolume> = vols
            .iter()
            .enumerate()
            .map(|(v, (_, a))| self.aux_image(a, v))
            .collect::<Result<_>>()?;
        let cells = self.cells(vols.len());
        let outcomes: Vec<CellOutcome> = cells
            .par_iter()
            .map(|cell| {
                let r = self.run_cell(cell, &vols[cell.volume].0, &aux[cell.volume], &prior, &sched, translator.as_ref());
                if let Err(e) = &r {
                    log::warn!("cell {} failed: {e}", cell.id());
                }
                CellOutcome {
                    cell: *cell,
                    failure: r.err().map(|e| e.to_string()),
                }
            })
            .collect();
        let path = self.layout.cells_csv();
        let mut w = csv_writer();
        w.write_record(["cell", "volume", "views", "steps", "noise", "mode", "status", "message"])
            .map_err(csv_err(&path))?;
        for o in &outcomes {
            let c = &o.cell;
            w.write_record([
                c.id(),
                c.volume.to_string(),
                c.views.to_string(),
                c.steps.to_string(),
                c.noise.to_string(),
                c.mode.name().to_string(),
                if o.failure.is_some() { "failed" } else { "ok" }.to_string(),
                csv_safe(o.failure.as_deref().unwrap_or("")),
            ])
            .map_err(csv_err(&path))?;
        }
        csv_finish(&path, w)?;
        Ok(outcomes)
    }

    fn run_cell(
        &self,
        cell: &Cell,
        main: &GridVolume,
        aux: &GridVolume,
        prior: &DenoiserParams,
        sched: &NoiseSchedule,
        translator: Option<&TranslationModel>,
    ) -> Result<()> {
        let c = &self.config;
        let y = self.measurements(main, cell.volume, cell.views, cell.noise)?;
        let seed = rng::mix(
            c.seeds.solver,
            &[tag::CELL, cell.volume as u64, cell.views as u64, cell.steps as u64, cell.noise.to_bits()],
        );
        let crossmodal = cell.mode == Mode::Crossmodal;
        let scfg = c.solver.build(cell.steps, crossmodal, c.geometry.filter, seed);
        let refiner = translator.map(|t| t as &dyn Refiner);
        let problem = Problem {
            y_main: &y,
            y_aux: Some(aux),
            sched,
            config: &scfg,
            refiner: if crossmodal { refiner } else { None },
            truth: Some(main),
        };
        let dir = self.cell_dir(cell);
        io::write_grid(&dir.join("y_main.grid"), &io::sinograms_to_grid(&y)?, Dtype::F64)?;
        let mut state = solver::start(&y, prior, sched, &scfg)?;
        let result = solver::run(&problem, &mut state);
        write_text(&dir.join("trace.txt"), &state.trace.to_text())?;
        let out = result?;
        io::write_grid(&dir.join("recon.grid"), &out, Dtype::F64)
    }

    /// Scores every completed cell against its ground truth.
    pub fn evaluate(&self) -> Result<usize> {
        self.pool()?.install(|| self.evaluate_inner())
    }

    fn evaluate_inner(&self) -> Result<usize> {
        let vols = self.load_test_volumes()?;
        let cells = self.completed_cells()?;
        let reports = cells
            .par_iter()
            .map(|cell| {
                let truth = &vols
                    .get(cell.volume)
                    .ok_or_else(|| Error::Config(format!("cell {} refers to a missing test volume", cell.id())))?
                    .0;
                let recon = io::read_grid(&self.cell_dir(cell).join("recon.grid"))?;
                MetricReport::evaluate(&recon, truth, 1.0)
            })
            .collect::<Result<Vec<_>>>()?;
        let path = self.layout.metrics_csv();
        let mut w = csv_writer();
        w.write_record(report::METRIC_COLUMNS).map_err(csv_err(&path))?;
        for (cell, rep) in cells.iter().zip(&reports) {
            for row in report::metric_rows(cell, rep) {
                w.write_record(&row).map_err(csv_err(&path))?;
            }
        }
        csv_finish(&path, w)?;
        Ok(cells.len())
    }

    /// Cells marked `ok` in the reconstruction log; empty if none ran.
    pub fn completed_cells(&self) -> Result<Vec<Cell>> {
        Ok(self.cell_log()?.into_iter().filter(|o| o.failure.is_none()).map(|o| o.cell).collect())
    }

    fn cell_log(&self) -> Result<Vec<CellOutcome>> {
        let path = self.layout.cells_csv();
        if !path.exists() {
            return Ok(Vec::new());
        }
        read_csv(&path)?
            .iter()
            .map(|r| {
                let mode = r
                    .get(5)
                    .and_then(Mode::parse)
                    .ok_or_else(|| Error::format(&path, "unknown mode"))?;
                Ok(CellOutcome {
                    cell: Cell {
                        volume: field(r, 1, &path)?,
                        views: field(r, 2, &path)?,
                        steps: field(r, 3, &path)?,
                        noise: field(r, 4, &path)?,
                        mode,
                    },
                    failure: match r.get(6) {
                        Some("ok") => None,
                        _ => Some(r.get(7).unwrap_or("").to_string()),
                    },
                })
            })
            .collect()
    }

    /// Builds the comparison table and image dumps from evaluated results.
    pub fn report(&self) -> Result<ReportTable> {
        let metrics_path = self.layout.metrics_csv();
        let rows = if metrics_path.exists() { read_csv(&metrics_path)? } else { Vec::new() };
        let failed: Vec<Cell> = self.cell_log()?.into_iter().filter(|o| o.failure.is_some()).map(|o| o.cell).collect();
        let table = ReportTable::from_metric_rows(&rows, &failed, &metrics_path)?;
        let dir = self.layout.report_dir();
        let precision = self.config.report.precision;
        write_text(&dir.join("table.csv"), &table.to_csv(precision))?;
        write_text(&dir.join("table.md"), &table.to_markdown(precision))?;
        if !rows.is_empty() {
            self.dump_images(&table)?;
        }
        Ok(table)
    }

    fn dump_images(&self, table: &ReportTable) -> Result<()> {
        let vols = self.load_test_volumes()?;
        let done = self.completed_cells()?;
        for row in &table.rows {
            for (v, (truth, _)) in vols.iter().enumerate() {
                let find = |mode| {
                    done.iter()
                        .find(|c| c.volume == v && c.views == row.views && c.steps == row.steps && c.noise == row.noise && c.mode == mode)
                        .copied()
                };
                let (Some(uni), Some(cross)) = (find(Mode::Unimodal), find(Mode::Crossmodal)) else { continue };
                let u = io::read_grid(&self.cell_dir(&uni).join("recon.grid"))?;
                let x = io::read_grid(&self.cell_dir(&cross).join("recon.grid"))?;
                let mut slices = self.config.report.dump_slices.clone();
                if slices.is_empty() {
                    slices.push(truth.depth() / 2);
                }
                for k in slices.into_iter().filter(|&k| k < truth.depth()) {
                    let (w, h) = (truth.width(), truth.height());
                    let mut values = Vec::with_capacity(3 * w * h);
                    for r in 0..h {
                        for img in [u.slice(k), x.slice(k), truth.slice(k)] {
                            values.extend_from_slice(&img.values()[r * w..(r + 1) * w]);
                        }
                    }
                    let name = format!(
                        "vol{v:03}_views{:03}_steps{:02}_noise{}_slice{k:03}.pgm",
                        row.views, row.steps, row.noise
                    );
                    io::write_atomic(&self.layout.report_dir().join("images").join(name), &encode_pgm(3 * w, h, &values))?;
                }
            }
        }
        Ok(())
    }
}
