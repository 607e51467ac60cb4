use proptest::prelude::*;
use rand::Rng;
use xmct::metrics::psnr;
use xmct::phantoms::{generate_paired_volume, PhantomRecipe};
use xmct::tomo::*;
use xmct::GridImage;

/// Disk of radius `r` pixels, rendered by 16x16 supersampling.
fn disk(n: usize, r: f64, mu: f64) -> GridImage {
    let c = n as f64 / 2.0;
    GridImage::from_fn(n, n, |row, col| {
        let mut hits = 0;
        for i in 0..16 {
            for j in 0..16 {
                let y = row as f64 + (i as f64 + 0.5) / 16.0 - c;
                let x = col as f64 + (j as f64 + 0.5) / 16.0 - c;
                if x * x + y * y <= r * r {
                    hits += 1;
                }
            }
        }
        mu * hits as f64 / 256.0
    })
}

fn random_image(n: usize, rng: &mut impl Rng) -> GridImage {
    GridImage::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_sinogram(g: &ProjectionGeometry, rng: &mut impl Rng) -> Sinogram {
    let v = (0..g.sinogram_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Sinogram::from_vec(g, v).unwrap()
}

/// Dense `A`, one column per indicator image.
fn dense_matrix(g: &ProjectionGeometry) -> Vec<Vec<f64>> {
    let n = g.image_side();
    (0..n * n)
        .map(|p| {
            let mut e = GridImage::zeros(n, n);
            e.values_mut()[p] = 1.0;
            forward_project(&e, g).unwrap().values().to_vec()
        })
        .collect()
}

#[test]
fn disk_central_bin_matches_chord_length() {
    let (r, mu) = (20.0, 0.5);
    let img = disk(64, r, mu);
    let g = ProjectionGeometry::parallel(64, 12).unwrap();
    let sino = forward_project(&img, &g).unwrap();
    // the pixel grid is centered on the detector's middle bin for odd bin counts
    let center = g.num_detector_bins() / 2;
    let expected = 2.0 * r * mu * g.pixel_pitch();
    for a in 0..g.num_angles() {
        let got = sino.row(a)[center];
        assert!(
            (got - expected).abs() <= 0.02 * expected,
            "angle {a}: {got} vs {expected}"
        );
    }
}

#[test]
fn dense_matrix_reproduces_projection_and_backprojection() {
    let g = ProjectionGeometry::parallel(8, 4).unwrap();
    let cols = dense_matrix(&g);
    let mut rng = xmct::rng::stream(1, &[]);
    let x = random_image(8, &mut rng);
    let ax = forward_project(&x, &g).unwrap();
    for m in 0..g.sinogram_len() {
        let dense: f64 = cols.iter().zip(x.values()).map(|(c, v)| c[m] * v).sum();
        assert!((dense - ax.values()[m]).abs() <= 1e-10);
    }
    // a single-bin sinogram backprojects onto that row of A
    for m in [0, 5, 17, g.sinogram_len() - 1] {
        let mut e = vec![0.0; g.sinogram_len()];
        e[m] = 1.0;
        let bp = back_project(&Sinogram::from_vec(&g, e).unwrap());
        for (p, col) in cols.iter().enumerate() {
            assert!((bp.values()[p] - col[m]).abs() <= 1e-12);
        }
    }
}

#[test]
fn adjoint_identity_holds_for_random_pairs() {
    for (n, views) in [(16, 8), (64, 32)] {
        let g = ProjectionGeometry::parallel(n, views).unwrap();
        let mut rng = xmct::rng::stream(n as u64, &[views as u64]);
        for _ in 0..100 {
            let x = random_image(n, &mut rng);
            let y = random_sinogram(&g, &mut rng);
            let ax = forward_project(&x, &g).unwrap();
            let aty = back_project(&y);
            let gap = (ax.dot(&y) - x.dot(&aty)).abs();
            assert!(gap <= 1e-6 * ax.norm() * y.norm(), "gap {gap}");
        }
    }
}

#[test]
fn symmetric_phantom_projects_identically_at_every_angle() {
    let img = disk(64, 18.0, 0.7);
    let g = ProjectionGeometry::parallel(64, 17).unwrap();
    let sino = forward_project(&img, &g).unwrap();
    let first = sino.row(0);
    let norm = first.iter().map(|v| v * v).sum::<f64>().sqrt();
    for a in 1..g.num_angles() {
        let dev = sino
            .row(a)
            .iter()
            .zip(first)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(dev <= 0.02 * norm, "angle {a}: deviation {dev} vs norm {norm}");
    }
}

#[test]
fn fbp_improves_with_views_on_ellipse_phantom() {
    let (main, _) = generate_paired_volume(&PhantomRecipe::default(), 0).unwrap();
    let phantom = main.slice(main.depth() / 2);
    let scores: Vec<f64> = [8, 16, 32, 64, 128, 256]
        .iter()
        .map(|&v| {
            let g = ProjectionGeometry::parallel(64, v).unwrap();
            let rec = fbp_reconstruct(&forward_project(phantom, &g).unwrap(), FilterKind::default())
                .unwrap();
            psnr(&rec, phantom, 1.0).unwrap()
        })
        .collect();
    assert!(scores[5] >= 30.0, "{scores:?}");
    assert!(scores.windows(2).all(|w| w[1] >= w[0]), "{scores:?}");
    assert!(scores[0] < scores[5]);
}

#[test]
fn fbp_is_deterministic() {
    let (main, _) = generate_paired_volume(&PhantomRecipe::default(), 3).unwrap();
    let g = ProjectionGeometry::parallel(64, 16).unwrap();
    let sino = forward_project(main.slice(10), &g).unwrap();
    for f in [FilterKind::RamLak, FilterKind::Hann] {
        assert_eq!(fbp_reconstruct(&sino, f).unwrap(), fbp_reconstruct(&sino, f).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g = ProjectionGeometry::parallel(16, 6).unwrap();
        let mut rng = xmct::rng::stream(seed, &[]);
        let x = random_image(16, &mut rng);
        let z = random_image(16, &mut rng);
        let mut combo = x.map(|v| a * v);
        combo.axpy(b, &z);
        let lhs = forward_project(&combo, &g).unwrap();
        let px = forward_project(&x, &g).unwrap();
        let pz = forward_project(&z, &g).unwrap();
        for ((l, p), q) in lhs.values().iter().zip(px.values()).zip(pz.values()) {
            let rhs = a * p + b * q;
            prop_assert!((l - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
    }
}
