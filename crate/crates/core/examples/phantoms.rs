//! Paired main/aux phantom volumes with shared and modality-specific structure.
//!
//!     cargo run --example phantoms -- [out_dir]
//!
//! With an output directory, writes the middle slice of each modality as PGM.

use std::fs;
use std::path::PathBuf;

use xmct::harness::encode_pgm;
use xmct::metrics::ssim;
use xmct::phantoms::{Modality, PairedPhantom, PhantomRecipe};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let recipe = PhantomRecipe { depth: 8, ..Default::default() };
    let phantom = PairedPhantom::sample(&recipe, 42)?;
    let [shared, main_only, aux_only] = phantom.visibility_counts();
    println!("ellipsoids: {shared} shared, {main_only} main only, {aux_only} aux only");

    let main = phantom.render(Modality::Main);
    let aux = phantom.render(Modality::Aux);
    for k in 0..main.depth() {
        println!("slice {k}: main/aux ssim {:.3}", ssim(main.slice(k), aux.slice(k), 1.0, 7)?);
    }

    if let Some(dir) = std::env::args().nth(1).map(PathBuf::from) {
        fs::create_dir_all(&dir)?;
        let mid = main.depth() / 2;
        for (name, vol) in [("main", &main), ("aux", &aux)] {
            let s = vol.slice(mid);
            fs::write(dir.join(format!("{name}.pgm")), encode_pgm(s.width(), s.height(), s.values()))?;
        }
        println!("wrote {}", dir.display());
    }
    Ok(())
}
