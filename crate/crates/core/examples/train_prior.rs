//! Trains a small diffusion prior on synthetic slices and saves a checkpoint.
//!
//!     cargo run --example train_prior -- [checkpoint_path]

use std::path::PathBuf;

use xmct::diffusion::{train_denoiser, DenoiserParams, NoiseSchedule};
use xmct::nn::{OptimizerKind, TrainConfig, UNetConfig};
use xmct::phantoms::{sample_prior_slice, PhantomRecipe};

fn main() -> xmct::Result<()> {
    let recipe = PhantomRecipe { volume_side: 32, depth: 4, ..Default::default() };
    let slices = (0..128).map(|i| sample_prior_slice(&recipe, i)).collect::<xmct::Result<Vec<_>>>()?;
    let sched = NoiseSchedule::default();
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 8,
        lr: 2e-3,
        optimizer: OptimizerKind::Adam,
        seed: 1,
        max_steps: Some(150),
    };
    let init = DenoiserParams::init(UNetConfig::denoiser(4), 0)?;
    // Only timesteps up to 200 are ever visited by the solver.
    let (prior, log) = train_denoiser(&slices, &sched, &cfg, Some(200), init)?;
    for (epoch, loss) in log.epoch_losses.iter().enumerate() {
        println!("epoch {epoch:>2}: loss {loss:.4}");
    }
    println!("{} parameters", prior.theta().len());

    if let Some(path) = std::env::args().nth(1).map(PathBuf::from) {
        xmct::io::save_denoiser(&path, &prior, &sched, None)?;
        println!("saved {}", path.display());
    }
    Ok(())
}
