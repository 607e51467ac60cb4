//! Trains the cross-modal translator on a small paired dataset and reports
//! how many held-out pairs it improves.
//!
//!     cargo run --example train_translator

use xmct::degrade::{build_paired_dataset, spec_product, DegradationSpec};
use xmct::metrics::psnr;
use xmct::nn::UNetConfig;
use xmct::phantoms::PhantomRecipe;
use xmct::tomo::FilterKind;
use xmct::xmodal::{apply_translation, train_translation, validation_split, TranslationConfig, TranslationModel};

fn main() -> xmct::Result<()> {
    let recipe = PhantomRecipe { volume_side: 32, depth: 4, ..Default::default() };
    let mains = spec_product(&[8, 16], &[0.0, 0.05], &[0.0, 1.0], &[1.0]);
    let auxs = spec_product(&[64], &[0.03], &[1.0], &[1.0]);
    let grid: Vec<_> = mains.iter().flat_map(|m| auxs.iter().map(move |a| (*m, *a))).collect();
    let data = build_paired_dataset(&recipe, &DegradationSpec::ideal(128), &grid, 120, 5, FilterKind::RamLak)?;
    let (train_idx, val_idx) = validation_split(data.len(), 0.2, 1);
    let train: Vec<_> = train_idx.iter().map(|&i| data[i].clone()).collect();

    let cfg = TranslationConfig { epochs: 20, batch_size: 8, lr: 3e-3, seed: 2, max_steps: Some(200), ..Default::default() };
    let init = TranslationModel::init(UNetConfig::translator(4), 32, 3)?;
    let (model, log) = train_translation(&train, &cfg, init)?;
    let first = log.epoch_losses.first().copied().unwrap_or(f64::NAN);
    let last = log.epoch_losses.last().copied().unwrap_or(f64::NAN);
    println!("L1 loss {first:.4} -> {last:.4} over {} steps", log.step_losses.len());

    let mut improved = 0;
    for &i in &val_idx {
        let s = &data[i];
        let before = psnr(&s.degraded_main.clipped(0.0, 1.0), &s.ideal_main, 1.0)?;
        let after = psnr(&apply_translation(&model, &s.degraded_main, &s.degraded_aux)?, &s.ideal_main, 1.0)?;
        improved += usize::from(after >= before);
    }
    println!("{improved}/{} held-out pairs improved", val_idx.len());
    Ok(())
}
