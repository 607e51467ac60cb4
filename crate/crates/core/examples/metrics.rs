//! PSNR and SSIM on a few standard corruptions of one image.
//!
//!     cargo run --example metrics

use xmct::degrade::gaussian_blur;
use xmct::diffusion::gaussian_image;
use xmct::metrics::{psnr, ssim};
use xmct::phantoms::shepp_logan;
use xmct::rng;

fn main() -> xmct::Result<()> {
    let truth = shepp_logan(64);
    let mut r = rng::stream(1, &[]);
    let noise = gaussian_image(64, 64, &mut r);
    let noisy = xmct::GridImage::from_fn(64, 64, |i, j| truth.get(i, j) + 0.05 * noise.get(i, j)).clipped(0.0, 1.0);
    let cases = [
        ("identical", truth.clone()),
        ("noise 0.05", noisy),
        ("blur 1px", gaussian_blur(&truth, 1.0)),
        ("blur 2px", gaussian_blur(&truth, 2.0)),
    ];
    for (name, img) in &cases {
        println!("{name:<12} psnr {:>7.2} dB  ssim {:.4}", psnr(img, &truth, 1.0)?, ssim(img, &truth, 1.0, 7)?);
    }
    Ok(())
}
