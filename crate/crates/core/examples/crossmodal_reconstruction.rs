//! Sparse-view reconstruction of one volume with and without the aux-guided
//! translator, using small models trained on the spot.
//!
//!     cargo run --example crossmodal_reconstruction -- [views]

use xmct::degrade::{build_paired_dataset, degraded_reconstruction, spec_product, DegradationSpec};
use xmct::diffusion::{train_denoiser, DenoiserParams, NoiseSchedule};
use xmct::metrics::MetricReport;
use xmct::nn::{OptimizerKind, TrainConfig, UNetConfig};
use xmct::phantoms::{generate_paired_volume, sample_prior_slice, PhantomRecipe};
use xmct::solver::{reconstruct, Problem, SolverConfig};
use xmct::tomo::{fbp_reconstruct, forward_project, FilterKind, ProjectionGeometry};
use xmct::xmodal::{train_translation, TranslationConfig, TranslationModel};
use xmct::GridVolume;

fn main() -> xmct::Result<()> {
    let views: usize = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(16);
    let recipe = PhantomRecipe { volume_side: 32, depth: 4, ..Default::default() };
    let sched = NoiseSchedule::default();

    let slices = (0..128).map(|i| sample_prior_slice(&recipe, i)).collect::<xmct::Result<Vec<_>>>()?;
    let cfg = TrainConfig { epochs: 10, batch_size: 8, lr: 2e-3, optimizer: OptimizerKind::Adam, seed: 1, max_steps: Some(150) };
    let (prior, _) = train_denoiser(&slices, &sched, &cfg, Some(200), DenoiserParams::init(UNetConfig::denoiser(4), 0)?)?;

    let mains = spec_product(&[8, 16, 32], &[0.0], &[0.0, 1.0], &[1.0]);
    let aux_spec = DegradationSpec { num_views: 64, noise_relative_sigma: 0.03, blur_sigma: 1.0, sampling_keep_fraction: 1.0, seed: 0 };
    let grid: Vec<_> = mains.iter().map(|m| (*m, aux_spec)).collect();
    let pairs = build_paired_dataset(&recipe, &DegradationSpec::ideal(128), &grid, 120, 5, FilterKind::RamLak)?;
    let tcfg = TranslationConfig { epochs: 20, batch_size: 8, lr: 3e-3, seed: 2, max_steps: Some(200), ..Default::default() };
    let (translator, _) = train_translation(&pairs, &tcfg, TranslationModel::init(UNetConfig::translator(4), 32, 3)?)?;

    let (main, aux) = generate_paired_volume(&recipe, 1000)?;
    let geom = ProjectionGeometry::parallel(32, views)?;
    let y = main.iter().map(|s| forward_project(s, &geom)).collect::<xmct::Result<Vec<_>>>()?;
    let aux_rec = aux
        .iter()
        .enumerate()
        .map(|(k, s)| degraded_reconstruction(s, &aux_spec.with_seed(k as u64), FilterKind::RamLak))
        .collect::<xmct::Result<Vec<_>>>()?;
    let aux_rec = GridVolume::new(aux_rec)?;

    let fbp = y.iter().map(|s| Ok(fbp_reconstruct(s, FilterKind::RamLak)?.clipped(0.0, 1.0))).collect::<xmct::Result<Vec<_>>>()?;
    let fbp = MetricReport::evaluate(&GridVolume::new(fbp)?, &main, 1.0)?;
    println!("{views} views, fbp: {:.2} dB / {:.3}", fbp.mean_psnr(), fbp.mean_ssim());

    for crossmodal_enabled in [false, true] {
        let config = SolverConfig { crossmodal_enabled, seed: 3, ..Default::default() };
        let problem = Problem {
            y_main: &y,
            y_aux: Some(&aux_rec),
            sched: &sched,
            config: &config,
            refiner: Some(&translator),
            truth: Some(&main),
        };
        let (out, state) = reconstruct(&problem, &prior)?;
        let r = MetricReport::evaluate(&out, &main, 1.0)?;
        let label = if crossmodal_enabled { "crossmodal" } else { "unimodal" };
        println!("{label}: {:.2} dB / {:.3}, refined at t = {:?}", r.mean_psnr(), r.mean_ssim(), state.trace.refined_steps());
    }
    Ok(())
}
