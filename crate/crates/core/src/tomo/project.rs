//! Strip-integral forward projection and its exact adjoint.
//!
//! Each square pixel projects onto the detector as a trapezoid (the
//! convolution of its two edge shadows); a bin receives the fraction of that
//! trapezoid's mass lying inside the bin. Backprojection gathers with the
//! identical weights, so `<A x, y> = <x, A^T y>` holds up to rounding.

use super::{ProjectionGeometry, Sinogram};
use crate::error::Result;
use crate::grid::GridImage;

/// Detector position (in bins) of pixel `(row, 0)` and the per-column step,
/// for one view angle.
struct ViewLine {
    wide: f64,
    narrow: f64,
    origin: f64,
    row_step: f64,
    col_step: f64,
}

impl ViewLine {
    fn new(geom: &ProjectionGeometry, angle: f64) -> Self {
        let n = geom.image_side();
        let pp = geom.pixel_pitch();
        let dp = geom.detector_pitch();
        let half = (n as f64 - 1.0) / 2.0;
        let center_bin = (geom.num_detector_bins() as f64 - 1.0) / 2.0;
        let (sin, cos) = angle.sin_cos();
        // s(row, col) = (col - half) pp cos + (half - row) pp sin
        let (t1, t2) = ((cos * pp / dp).abs(), (sin * pp / dp).abs());
        Self {
            wide: t1.max(t2),
            narrow: t1.min(t2),
            origin: center_bin + (-half * cos + half * sin) * pp / dp,
            row_step: -sin * pp / dp,
            col_step: cos * pp / dp,
        }
    }

    #[inline]
    fn position(&self, row: usize, col: usize) -> f64 {
        self.origin + row as f64 * self.row_step + col as f64 * self.col_step
    }
}

/// Mass fraction of a unit pixel's projection falling below offset `x`
/// (in bins, relative to the pixel center): the CDF of the sum of two centered
/// uniforms of widths `wide >= narrow`.
#[inline]
fn trapezoid_cdf(x: f64, wide: f64, narrow: f64) -> f64 {
    let half = 0.5 * (wide + narrow);
    let x = x + half;
    if x <= 0.0 {
        return 0.0;
    }
    if x >= wide + narrow {
        return 1.0;
    }
    if narrow < 1e-9 {
        return (x / wide).min(1.0);
    }
    if x <= narrow {
        x * x / (2.0 * wide * narrow)
    } else if x <= wide {
        narrow / (2.0 * wide) + (x - narrow) / wide
    } else {
        let r = wide + narrow - x;
        1.0 - r * r / (2.0 * wide * narrow)
    }
}

/// Calls `f(bin, weight)` for every bin touched by the pixel centered at
/// detector position `u`; weights are the pixel's mass fraction per bin.
#[inline]
fn footprint(u: f64, wide: f64, narrow: f64, nb: isize, mut f: impl FnMut(usize, f64)) {
    let half = 0.5 * (wide + narrow);
    let first = ((u - half + 0.5).floor() as isize).max(0);
    let last = ((u + half + 0.5).floor() as isize).min(nb - 1);
    let mut prev = trapezoid_cdf(first as f64 - 0.5 - u, wide, narrow);
    for b in first..=last {
        let next = trapezoid_cdf(b as f64 + 0.5 - u, wide, narrow);
        let w = next - prev;
        if w > 0.0 {
            f(b as usize, w);
        }
        prev = next;
    }
}

/// Sinogram of `img` under `geom` (the operator `A`).
pub fn forward_project(img: &GridImage, geom: &ProjectionGeometry) -> Result<Sinogram> {
    geom.check_image(img)?;
    img.ensure_finite()?;
    let n = geom.image_side();
    let nb = geom.num_detector_bins() as isize;
    let weight = geom.pixel_pitch() * geom.pixel_pitch() / geom.detector_pitch();
    let mut sino = Sinogram::zeros(geom);
    let values = img.values();
    for (a, &angle) in geom.angles().iter().enumerate() {
        let line = ViewLine::new(geom, angle);
        let row_out = &mut sino.values_mut()[a * nb as usize..(a + 1) * nb as usize];
        for r in 0..n {
            for c in 0..n {
                let v = values[r * n + c];
                if v == 0.0 {
                    continue;
                }
                let v = v * weight;
                footprint(line.position(r, c), line.wide, line.narrow, nb, |b, w| {
                    row_out[b] += w * v;
                });
            }
        }
    }
    Ok(sino)
}

/// Adjoint `A^T` of [`forward_project`].
pub fn back_project(sino: &Sinogram) -> GridImage {
    let geom = sino.geometry();
    let weight = geom.pixel_pitch() * geom.pixel_pitch() / geom.detector_pitch();
    smear(sino, weight)
}

/// Gathers `scale * sum_a interp(sino[a], s(pixel))` for every pixel.
pub(crate) fn smear(sino: &Sinogram, scale: f64) -> GridImage {
    let geom = sino.geometry();
    let n = geom.image_side();
    let nb = geom.num_detector_bins() as isize;
    let mut out = vec![0.0; n * n];
    for (a, &angle) in geom.angles().iter().enumerate() {
        let line = ViewLine::new(geom, angle);
        let row_in = sino.row(a);
        for r in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                footprint(line.position(r, c), line.wide, line.narrow, nb, |b, w| {
                    acc += w * row_in[b];
                });
                out[r * n + c] += acc;
            }
        }
    }
    for v in &mut out {
        *v *= scale;
    }
    GridImage::from_vec(n, n, out).expect("shape fixed by geometry")
}

/// Largest eigenvalue of `A^T A`, by power iteration from a constant image.
pub fn operator_norm_sq(geom: &ProjectionGeometry, iterations: usize) -> Result<f64> {
    let n = geom.image_side();
    let mut x = GridImage::filled(n, n, 1.0 / n as f64);
    let mut lambda = 0.0;
    for _ in 0..iterations.max(1) {
        let y = back_project(&forward_project(&x, geom)?);
        let norm = y.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        lambda = norm / x.norm();
        x = y.map(|v| v / norm);
    }
    Ok(lambda)
}
