//! Builds a small paired translation dataset and summarizes input quality by view count.
//!
//!     cargo run --example degraded_dataset

use std::collections::BTreeMap;

use xmct::degrade::{build_paired_dataset, spec_product, DegradationSpec};
use xmct::metrics::{mean, psnr};
use xmct::phantoms::PhantomRecipe;
use xmct::tomo::FilterKind;

fn main() -> xmct::Result<()> {
    let recipe = PhantomRecipe { volume_side: 32, depth: 4, ..Default::default() };
    let mains = spec_product(&[8, 16, 32], &[0.0, 0.05], &[0.0, 1.0], &[0.7, 1.0]);
    let auxs = spec_product(&[64], &[0.03], &[1.0], &[1.0]);
    let grid: Vec<_> = mains.iter().flat_map(|m| auxs.iter().map(move |a| (*m, *a))).collect();
    let samples = build_paired_dataset(&recipe, &DegradationSpec::ideal(128), &grid, 60, 3, FilterKind::RamLak)?;

    let mut by_views: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for s in &samples {
        let p = psnr(&s.degraded_main.clipped(0.0, 1.0), &s.ideal_main, 1.0)?;
        by_views.entry(s.spec_main.num_views).or_default().push(p);
    }
    println!("{} samples", samples.len());
    for (views, scores) in &by_views {
        println!("{views:>4} views: {:>3} samples, mean psnr {:.2} dB", scores.len(), mean(scores));
    }
    Ok(())
}
