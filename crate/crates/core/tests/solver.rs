use xmct::diffusion::*;
use xmct::metrics::psnr;
use xmct::nn::UNetConfig;
use xmct::phantoms::{sample_prior_slice, PhantomRecipe};
use xmct::solver::*;
use xmct::tomo::*;
use xmct::{rng, GridImage, GridVolume};

/// Predicts the exact noise that was mixed in.
struct Oracle(GridImage);

impl NoisePredictor for Oracle {
    fn predict_eps(&self, _xt: &GridImage, _t: usize) -> xmct::Result<GridImage> {
        Ok(self.0.clone())
    }
}

struct Zero;

impl NoisePredictor for Zero {
    fn predict_eps(&self, xt: &GridImage, _t: usize) -> xmct::Result<GridImage> {
        Ok(GridImage::zeros(xt.width(), xt.height()))
    }
}

fn tiny_arch() -> UNetConfig {
    UNetConfig {
        in_channels: 1,
        out_channels: 1,
        base_channels: 4,
        channel_mults: vec![1, 2],
        time_embed_dim: 8,
    }
}

fn phantom(side: usize, seed: u64) -> GridImage {
    let recipe = PhantomRecipe {
        volume_side: side,
        ..Default::default()
    };
    sample_prior_slice(&recipe, seed).unwrap()
}

fn volume(side: usize, depth: usize, seed: u64) -> GridVolume {
    GridVolume::new((0..depth).map(|k| phantom(side, seed * 100 + k as u64)).collect()).unwrap()
}

fn measure(v: &GridVolume, views: usize) -> Vec<Sinogram> {
    let g = ProjectionGeometry::parallel(v.width(), views).unwrap();
    v.iter().map(|s| forward_project(s, &g).unwrap()).collect()
}

fn no_dc() -> DataConsistency {
    DataConsistency {
        steps: 0,
        step_size: 0.0,
    }
}

#[test]
fn oracle_prediction_has_negligible_loss() {
    let sched = NoiseSchedule::default();
    let x0 = phantom(16, 1);
    let y = measure(&GridVolume::new(vec![x0.clone()]).unwrap(), 24);
    let eps = gaussian_image(16, 16, &mut rng::stream(2, &[]));
    for index in [1, 50, 200] {
        let xt = noising_sample(&x0, index, &eps, &sched).unwrap();
        let loss = data_consistency_loss(&[xt.clone()], &y, &Oracle(eps.clone()), index, &sched, &no_dc()).unwrap();
        assert!(loss <= 1e-8 * y[0].dot(&y[0]), "index {index} loss {loss}");
        let pred = diff_solver_predict(&GridVolume::new(vec![xt]).unwrap(), index, &Oracle(eps.clone()), &y, &sched, &no_dc()).unwrap();
        assert!(psnr(pred.slice(0), &x0, 1.0).unwrap() >= 60.0);
    }
}

#[test]
fn zero_prediction_loss_is_quadratic_in_y() {
    let sched = NoiseSchedule::default();
    let g = ProjectionGeometry::parallel(8, 6).unwrap();
    let xt = GridImage::zeros(8, 8);
    let zero_y = Sinogram::zeros(&g);
    let loss = data_consistency_loss(&[xt.clone()], &[zero_y], &Zero, 10, &sched, &no_dc()).unwrap();
    assert_eq!(loss, 0.0);

    let y = forward_project(&phantom(8, 3), &g).unwrap();
    let l1 = data_consistency_loss(&[xt.clone()], &[y.clone()], &Zero, 10, &sched, &no_dc()).unwrap();
    let l2 = data_consistency_loss(&[xt], &[y.scaled(2.0)], &Zero, 10, &sched, &no_dc()).unwrap();
    assert!(l1 > 0.0);
    assert!((l2 - 4.0 * l1).abs() <= 1e-12 * l2);
}

#[test]
fn batch_loss_is_the_mean_over_slices() {
    let sched = NoiseSchedule::default();
    let v = volume(8, 3, 4);
    let y = measure(&v, 6);
    let xs: Vec<GridImage> = (0..3).map(|k| GridImage::filled(8, 8, 0.1 * k as f64)).collect();
    let dc = DataConsistency {
        steps: 2,
        step_size: 0.01,
    };
    let batch = data_consistency_loss(&xs, &y, &Zero, 5, &sched, &dc).unwrap();
    let each: f64 = (0..3)
        .map(|k| data_consistency_loss(&xs[k..k + 1], &y[k..k + 1], &Zero, 5, &sched, &dc).unwrap())
        .sum();
    assert!((batch - each / 3.0).abs() <= 1e-12 * batch);
}

#[test]
fn zero_inner_steps_give_the_clipped_tweedie_estimate() {
    let sched = NoiseSchedule::default();
    let v = volume(8, 2, 5);
    let y = measure(&v, 6);
    let xt = GridVolume::new((0..2).map(|k| gaussian_image(8, 8, &mut rng::stream(k, &[]))).collect()).unwrap();
    let out = diff_solver_predict(&xt, 40, &Zero, &y, &sched, &no_dc()).unwrap();
    for (o, x) in out.iter().zip(xt.iter()) {
        let want = tweedie_estimate(x, 40, &Zero, &sched).unwrap().clipped(0.0, 1.0);
        assert_eq!(o, &want);
    }
}

#[test]
fn data_consistency_residual_falls_monotonically() {
    let x = phantom(16, 6);
    let g = ProjectionGeometry::parallel(16, 64).unwrap();
    let y = forward_project(&x, &g).unwrap();
    let step = DataConsistency::for_geometry(&g, 1, 1.9).unwrap();
    let mut cur = GridImage::zeros(16, 16);
    let mut last = sinogram_residual_sq(&cur, &y).unwrap();
    for _ in 0..40 {
        cur = step.refine(&cur, &y).unwrap();
        let r = sinogram_residual_sq(&cur, &y).unwrap();
        assert!(r < last, "{r} >= {last}");
        last = r;
    }
    assert!(last < 0.05 * y.dot(&y));
}

fn config(t_prime: usize, steps: usize) -> SolverConfig {
    SolverConfig {
        t_prime,
        num_adapt_steps: steps,
        schedule_start: 200,
        seed: 17,
        ..Default::default()
    }
}

#[test]
fn adaptation_with_no_steps_or_zero_rate_keeps_parameters() {
    let sched = NoiseSchedule::default();
    let v = volume(8, 3, 7);
    let y = measure(&v, 8);
    let params = DenoiserParams::init(tiny_arch(), 3).unwrap();
    let c = config(4, 0);
    let dc = DataConsistency::for_geometry(y[0].geometry(), 2, 1.0).unwrap();
    let xt = init_latent(&y, &sched, &c).unwrap();
    let (p, losses) = adapt_weights(&params, &xt, &y, 4, &sched, &c, &dc).unwrap();
    assert_eq!(p, params);
    assert!(losses.is_empty());

    let c = SolverConfig {
        adapt_lr: 0.0,
        ..config(4, 5)
    };
    let (p, losses) = adapt_weights(&params, &xt, &y, 4, &sched, &c, &dc).unwrap();
    assert_eq!(p, params);
    assert_eq!(losses.len(), 5);
    assert!(losses.iter().all(|l| l.is_finite() && *l > 0.0));
}

#[test]
fn adaptation_descends_on_a_small_problem() {
    let sched = NoiseSchedule::default();
    let v = volume(8, 2, 8);
    let y = measure(&v, 8);
    let params = DenoiserParams::init(tiny_arch(), 8).unwrap();
    let c = SolverConfig {
        adapt_lr: 2e-4,
        minibatch_k: 2,
        ..config(4, 50)
    };
    let dc = no_dc();
    let xt = init_latent(&y, &sched, &c).unwrap();
    let (_, losses) = adapt_weights(&params, &xt, &y, 4, &sched, &c, &dc).unwrap();
    let (first, last) = (losses[0], *losses.last().unwrap());
    assert!(last <= 0.8 * first, "first {first} last {last}");
}

#[test]
fn init_latent_limits() {
    let v = volume(16, 2, 9);
    let y = measure(&v, 64);
    let c = SolverConfig {
        schedule_start: 1000,
        ..config(10, 1)
    };
    let noisy = make_schedule(1000, 0.05, 0.5).unwrap();
    assert!(noisy.alpha_bar(1000) < 1e-12);
    let lat = init_latent(&y, &noisy, &c).unwrap();
    let vals: Vec<f64> = lat.iter().flat_map(|s| s.values().to_vec()).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 4.0 / n.sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() < 0.15, "var {var}");

    let clean = make_schedule(1000, 1e-14, 1e-14).unwrap();
    let lat = init_latent(&y, &clean, &c).unwrap();
    for (l, s) in lat.iter().zip(&y) {
        let fbp = fbp_reconstruct(s, c.fbp_filter).unwrap();
        let diff = l.values().iter().zip(fbp.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let bound = 6.0 * (1.0 - clean.alpha_bar(1000)).sqrt();
        assert!(diff < bound, "diff {diff} bound {bound}");
    }
    assert_eq!(init_latent(&y, &clean, &c).unwrap(), lat);
}

struct Run {
    out: GridVolume,
    state: SolverState,
}

fn solve(c: &SolverConfig, refiner: Option<&dyn Refiner>, seed: u64) -> Run {
    let sched = NoiseSchedule::default();
    let v = volume(16, 3, seed);
    let y = measure(&v, 16);
    let aux = volume(16, 3, seed + 1000);
    let theta = DenoiserParams::init(tiny_arch(), seed).unwrap();
    let problem = Problem {
        y_main: &y,
        y_aux: Some(&aux),
        sched: &sched,
        config: c,
        refiner,
        truth: Some(&v),
    };
    let (out, state) = reconstruct(&problem, &theta).unwrap();
    Run { out, state }
}

fn bits(v: &GridVolume) -> Vec<u64> {
    v.iter().flat_map(|s| s.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect()
}

#[test]
fn disabled_refinement_equals_identity_refinement() {
    let base = SolverConfig {
        adapt_lr: 1e-4,
        ..config(10, 3)
    };
    let uni = solve(&base, None, 1);
    let on = SolverConfig {
        crossmodal_enabled: true,
        ..base.clone()
    };
    let ident = solve(&on, Some(&IdentityRefiner), 1);
    assert_eq!(bits(&uni.out), bits(&ident.out));
    assert_eq!(uni.state.theta, ident.state.theta);
    assert_eq!(bits(&uni.state.latent), bits(&ident.state.latent));
    let (a, b) = (uni.state.trace.records(), ident.state.trace.records());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_eq!((x.t, x.schedule_index), (y.t, y.schedule_index));
        assert_eq!(x.adapt_losses, y.adapt_losses);
        assert_eq!(x.residual.to_bits(), y.residual.to_bits());
        assert_eq!(x.psnr.map(f64::to_bits), y.psnr.map(f64::to_bits));
    }
    assert!(uni.state.trace.refined_steps().is_empty());
}

#[test]
fn refinement_fires_on_even_steps_above_one() {
    let c = SolverConfig {
        crossmodal_enabled: true,
        ..config(10, 1)
    };
    let run = solve(&c, Some(&IdentityRefiner), 2);
    let trace = &run.state.trace;
    assert_eq!(trace.len(), 10);
    let ts: Vec<usize> = trace.records().iter().map(|r| r.t).collect();
    assert_eq!(ts, (1..=10).rev().collect::<Vec<_>>());
    let mut fired = trace.refined_steps();
    fired.sort();
    assert_eq!(fired, vec![2, 4, 6, 8, 10]);
    assert_eq!(fired.len(), c.expected_refinements());
    assert!(trace.records().iter().all(|r| r.adapt_losses.len() == 1));
}

#[test]
fn zero_rate_keeps_parameters_through_a_run() {
    let c = SolverConfig {
        adapt_lr: 0.0,
        ..config(5, 2)
    };
    let run = solve(&c, None, 3);
    assert_eq!(run.state.theta, DenoiserParams::init(tiny_arch(), 3).unwrap());
    assert!(run.state.trace.records().iter().all(|r| r.adapt_losses.len() == 2));
}

#[test]
fn runs_are_bit_reproducible() {
    let c = SolverConfig {
        adapt_lr: 1e-4,
        ..config(6, 2)
    };
    let a = solve(&c, None, 4);
    let b = solve(&c, None, 4);
    assert_eq!(bits(&a.out), bits(&b.out));
    assert_eq!(a.state.trace.to_text(), b.state.trace.to_text());
}

#[test]
fn final_residual_beats_fbp_on_clean_data() {
    let sched = NoiseSchedule::default();
    let slices: Vec<GridImage> = (0..64).map(|i| phantom(16, 9000 + i)).collect();
    let train = xmct::nn::TrainConfig {
        epochs: 100,
        batch_size: 8,
        lr: 1e-2,
        optimizer: xmct::nn::OptimizerKind::Adam,
        seed: 0,
        max_steps: Some(300),
    };
    let (theta, _) = train_denoiser(&slices, &sched, &train, Some(200), DenoiserParams::init(tiny_arch(), 0).unwrap()).unwrap();
    let mut wins = 0;
    let runs = 10;
    for seed in 0..runs {
        let v = volume(16, 2, 50 + seed);
        let y = measure(&v, 32);
        let c = SolverConfig {
            seed,
            ..config(5, 1)
        };
        let problem = Problem {
            y_main: &y,
            y_aux: None,
            sched: &sched,
            config: &c,
            refiner: None,
            truth: None,
        };
        let (out, _) = reconstruct(&problem, &theta).unwrap();
        let fbp: f64 = y.iter().map(|s| sinogram_residual_sq(&fbp_reconstruct(s, c.fbp_filter).unwrap(), s).unwrap()).sum();
        let ours: f64 = out.iter().zip(&y).map(|(x, s)| sinogram_residual_sq(x, s).unwrap()).sum();
        if ours <= fbp {
            wins += 1;
        }
    }
    assert!(wins * 10 >= runs * 9, "{wins}/{runs}");
}

#[test]
fn failed_adaptation_keeps_the_last_finite_parameters() {
    let sched = NoiseSchedule::default();
    let v = volume(8, 2, 10);
    let mut y = measure(&v, 8);
    y[0].values_mut()[0] = 1e200;
    let c = config(3, 2);
    let theta = DenoiserParams::init(tiny_arch(), 1).unwrap();
    let problem = Problem {
        y_main: &y,
        y_aux: None,
        sched: &sched,
        config: &c,
        refiner: None,
        truth: None,
    };
    let mut state = start(&y, &theta, &sched, &c).unwrap();
    let err = run(&problem, &mut state).unwrap_err();
    assert!(matches!(err, xmct::Error::Adaptation { .. }), "{err}");
    assert_eq!(state.theta, theta);
    assert!(state.trace.is_empty());
}
