//! Forward projection, adjoint check and FBP quality against the view count.
//!
//!     cargo run --example projection

use rand::Rng;
use xmct::metrics::{psnr, ssim};
use xmct::phantoms::shepp_logan;
use xmct::rng;
use xmct::tomo::{back_project, fbp_reconstruct, forward_project, FilterKind, ProjectionGeometry};
use xmct::GridImage;

fn main() -> xmct::Result<()> {
    let side = 64;
    let phantom = shepp_logan(side);

    // <Ax, y> should equal <x, A^T y> for any pair.
    let geom = ProjectionGeometry::parallel(side, 32)?;
    let mut r = rng::stream(7, &[]);
    let x = GridImage::from_fn(side, side, |_, _| r.gen_range(-1.0..1.0));
    let ax = forward_project(&x, &geom)?;
    let y = forward_project(&phantom, &geom)?;
    let gap = (ax.dot(&y) - x.dot(&back_project(&y))).abs() / (ax.norm() * y.norm());
    println!("relative adjoint gap: {gap:.2e}");

    println!("{:>6} {:>10} {:>8}", "views", "psnr (dB)", "ssim");
    for views in [8, 16, 32, 64, 128, 256] {
        let geom = ProjectionGeometry::parallel(side, views)?;
        let sino = forward_project(&phantom, &geom)?;
        let rec = fbp_reconstruct(&sino, FilterKind::RamLak)?.clipped(0.0, 1.0);
        println!("{views:>6} {:>10.2} {:>8.3}", psnr(&rec, &phantom, 1.0)?, ssim(&rec, &phantom, 1.0, 7)?);
    }
    Ok(())
}
