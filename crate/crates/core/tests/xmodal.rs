use proptest::prelude::*;
use rand::Rng;
use xmct::degrade::{degraded_reconstruction, DegradationSpec, PairedSample};
use xmct::metrics::psnr;
use xmct::nn::UNetConfig;
use xmct::phantoms::{generate_paired_volume, PhantomRecipe};
use xmct::rng;
use xmct::tomo::FilterKind;
use xmct::xmodal::*;
use xmct::GridImage;

const SIDE: usize = 16;

fn arch() -> UNetConfig {
    UNetConfig {
        in_channels: 2,
        out_channels: 1,
        base_channels: 4,
        channel_mults: vec![1, 2],
        time_embed_dim: 0,
    }
}

fn recipe() -> PhantomRecipe {
    PhantomRecipe {
        volume_side: SIDE,
        depth: 1,
        ..Default::default()
    }
}

fn pair(seed: u64, views: usize) -> PairedSample {
    let (main, aux) = generate_paired_volume(&recipe(), seed).unwrap();
    let spec = DegradationSpec {
        seed,
        ..DegradationSpec::ideal(views)
    };
    let aux_spec = DegradationSpec {
        num_views: 24,
        noise_relative_sigma: 0.03,
        blur_sigma: 1.0,
        sampling_keep_fraction: 1.0,
        seed: seed + 1,
    };
    PairedSample {
        degraded_main: degraded_reconstruction(main.slice(0), &spec, FilterKind::RamLak).unwrap(),
        degraded_aux: degraded_reconstruction(aux.slice(0), &aux_spec, FilterKind::RamLak).unwrap(),
        ideal_main: main.slice(0).clone(),
        spec_main: spec,
        spec_aux: aux_spec,
    }
}

fn noise_image(seed: u64) -> GridImage {
    let mut r = rng::stream(seed, &[]);
    GridImage::from_fn(SIDE, SIDE, |_, _| r.gen_range(0.0..1.0))
}

fn mae(a: &GridImage, b: &GridImage) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn config(steps: u64, lr: f64) -> TranslationConfig {
    TranslationConfig {
        epochs: 10_000,
        batch_size: 4,
        lr,
        seed: 3,
        max_steps: Some(steps),
        ..Default::default()
    }
}

#[test]
fn single_pair_overfits() {
    let p = pair(1, 8);
    let init = TranslationModel::init(arch(), SIDE, 1).unwrap();
    let (model, log) = train_translation(std::slice::from_ref(&p), &config(500, 5e-3), init).unwrap();
    assert_eq!(log.step_losses.len(), 500);
    let out = apply_translation(&model, &p.degraded_main, &p.degraded_aux).unwrap();
    let err = mae(&out, &p.ideal_main);
    assert!(err < 0.05, "mae {err}");
}

#[test]
fn noise_aux_with_clean_estimate_learns_identity() {
    let make = |seed: u64| {
        let mut p = pair(seed, 8);
        p.degraded_main = p.ideal_main.clone();
        p.degraded_aux = noise_image(seed + 500);
        p
    };
    let train: Vec<PairedSample> = (0..24).map(make).collect();
    let held: Vec<PairedSample> = (100..108).map(make).collect();
    let init = TranslationModel::init(arch(), SIDE, 2).unwrap();
    let (model, _) = train_translation(&train, &config(200, 2e-3), init).unwrap();
    for p in &held {
        let out = apply_translation(&model, &p.degraded_main, &p.degraded_aux).unwrap();
        let err = mae(&out, &p.degraded_main);
        assert!(err < 0.05, "mae {err}");
    }
}

#[test]
fn training_improves_held_out_pairs() {
    let data: Vec<PairedSample> = (0..40).map(|s| pair(200 + s, 8)).collect();
    let (train_idx, val_idx) = validation_split(data.len(), 0.2, 5);
    let train: Vec<PairedSample> = train_idx.iter().map(|&i| data[i].clone()).collect();
    let init = TranslationModel::init(arch(), SIDE, 3).unwrap();
    let (model, _) = train_translation(&train, &config(300, 5e-3), init).unwrap();
    let (mut before, mut after, mut improved) = (0.0, 0.0, 0);
    for &i in &val_idx {
        let p = &data[i];
        let b = psnr(&p.degraded_main.clipped(0.0, 1.0), &p.ideal_main, 1.0).unwrap();
        let out = apply_translation(&model, &p.degraded_main, &p.degraded_aux).unwrap();
        let a = psnr(&out, &p.ideal_main, 1.0).unwrap();
        before += b;
        after += a;
        improved += (a >= b) as usize;
    }
    assert!(after >= before, "mean psnr fell: {before} -> {after}");
    assert!(improved * 10 >= val_idx.len() * 7, "{improved}/{}", val_idx.len());
}

#[test]
fn zero_epochs_return_the_initial_model() {
    let p = pair(4, 8);
    let init = TranslationModel::init(arch(), SIDE, 4).unwrap();
    let cfg = TranslationConfig {
        epochs: 0,
        ..Default::default()
    };
    let (model, log) = train_translation(&[p], &cfg, init.clone()).unwrap();
    assert_eq!(model.theta(), init.theta());
    assert!(log.step_losses.is_empty());
}

#[test]
fn adversarial_training_stays_finite() {
    let data: Vec<PairedSample> = (0..4).map(|s| pair(300 + s, 8)).collect();
    let cfg = TranslationConfig {
        adversarial_weight: 0.01,
        discriminator_channels: 4,
        ..config(10, 2e-3)
    };
    let init = TranslationModel::init(arch(), SIDE, 5).unwrap();
    let (model, log) = train_translation(&data, &cfg, init).unwrap();
    assert_eq!(log.step_losses.len(), 10);
    assert!(log.step_losses.iter().all(|l| l.is_finite()));
    let out = apply_translation(&model, &data[0].degraded_main, &data[0].degraded_aux).unwrap();
    assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn application_is_pure() {
    let p = pair(6, 8);
    let init = TranslationModel::init(arch(), SIDE, 6).unwrap();
    let (model, _) = train_translation(std::slice::from_ref(&p), &config(20, 5e-3), init).unwrap();
    let a = apply_translation(&model, &p.degraded_main, &p.degraded_aux).unwrap();
    let b = apply_translation(&model, &p.degraded_main, &p.degraded_aux).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn outputs_stay_in_the_unit_interval(seed in any::<u64>(), scale in 0.0f64..1e6, shift in -1e3f64..1e3) {
        let model = TranslationModel::init(arch(), SIDE, seed).unwrap();
        let mut r = rng::stream(seed, &[]);
        let mut field = || GridImage::from_fn(SIDE, SIDE, |_, _| shift + scale * r.gen_range(-1.0..1.0));
        let (e, a) = (field(), field());
        let out = apply_translation(&model, &e, &a).unwrap();
        prop_assert!(out.values().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }
}
