//! Cross-modal translator: maps (current main estimate, degraded auxiliary
//! image) to an ideal main-modality image.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::PairedSample;
use crate::error::{Error, Result};
use crate::grid::GridImage;
use crate::nn::{self, NodeId, Optimizer, OptimizerKind, Tape, Tensor, TrainConfig, TrainLog, TrainState, UNet, UNetConfig};
use crate::rng::{self, tag};
use crate::solver::Refiner;

/// Estimates are clamped to this band before the logit skip connection.
const LOGIT_CLAMP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslationConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub max_steps: Option<u64>,
    /// Weight of the conditional patch-GAN term; 0 trains on L1 alone.
    pub adversarial_weight: f64,
    pub discriminator_channels: usize,
    pub discriminator_lr: f64,
}

impl Default for TranslationConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 8,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            max_steps: None,
            adversarial_weight: 0.0,
            discriminator_channels: 8,
            discriminator_lr: 2e-4,
        }
    }
}

impl TranslationConfig {
    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            optimizer: self.optimizer,
            seed: self.seed,
            max_steps: self.max_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train().validate()?;
        if !(self.adversarial_weight.is_finite() && self.adversarial_weight >= 0.0) {
            return Err(Error::Config(format!(
                "adversarial_weight {} must be finite and >= 0",
                self.adversarial_weight
            )));
        }
        if self.adversarial_weight > 0.0 && self.discriminator_channels == 0 {
            return Err(Error::Config("discriminator_channels must be positive".into()));
        }
        Ok(())
    }
}

/// Translator network, parameters, training resolution and the settings
/// it was trained with. Input channel order is (estimate, aux).
#[derive(Debug, Clone)]
pub struct TranslationModel {
    net: UNet,
    theta: Vec<f32>,
    resolution: usize,
    training: TranslationConfig,
}

impl PartialEq for TranslationModel {
    fn eq(&self, other: &Self) -> bool {
        self.net.config() == other.net.config()
            && self.theta == other.theta
            && self.resolution == other.resolution
            && self.training == other.training
    }
}

impl TranslationModel {
    pub fn new(arch: UNetConfig, theta: Vec<f32>, resolution: usize, training: TranslationConfig) -> Result<Self> {
        if arch.in_channels != 2 || arch.out_channels != 1 {
            return Err(Error::Config("a translator maps 2 channels to 1".into()));
        }
        if arch.time_embed_dim != 0 {
            return Err(Error::Config("a translator takes no timestep".into()));
        }
        let net = UNet::new(arch)?;
        if theta.len() != net.param_count() {
            return Err(Error::Dimension(format!(
                "architecture has {} parameters, got {}",
                net.param_count(),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("translator parameters must be finite".into()));
        }
        if resolution == 0 || resolution % net.size_multiple() != 0 {
            return Err(Error::Config(format!(
                "resolution {resolution} is not a positive multiple of {}",
                net.size_multiple()
            )));
        }
        Ok(Self {
            net,
            theta,
            resolution,
            training,
        })
    }

    pub fn init(arch: UNetConfig, resolution: usize, seed: u64) -> Result<Self> {
        let theta = UNet::new(arch.clone())?.init_params(seed);
        Self::new(arch, theta, resolution, TranslationConfig::default())
    }

    pub fn arch(&self) -> &UNetConfig {
        self.net.config()
    }

    pub fn theta(&self) -> &[f32] {
        &self.theta
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn training(&self) -> &TranslationConfig {
        &self.training
    }

    fn check(&self, img: &GridImage) -> Result<()> {
        if img.width() != self.resolution || img.height() != self.resolution {
            return Err(Error::Dimension(format!(
                "translator trained at {0}x{0}, got {1}x{2}",
                self.resolution,
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }
}

/// Records the translator on `tape`; returns (input leaf, output node).
fn record(net: &UNet, tape: &mut Tape<'_, f32>, estimate: &GridImage, aux: &GridImage) -> Result<NodeId> {
    let est = estimate.clipped(0.0, 1.0);
    let x = tape.leaf(Tensor::from_images(&[&est, aux]));
    let z = net.forward(tape, x, None)?;
    let skip = est.map(|v| {
        let p = v.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
        (p / (1.0 - p)).ln()
    });
    let skip = tape.leaf(Tensor::from_images(&[&skip]));
    let sum = tape.add(z, skip);
    Ok(tape.sigmoid(sum))
}

/// Refined estimate in `[0, 1]`.
pub fn apply_translation(model: &TranslationModel, estimate: &GridImage, aux: &GridImage) -> Result<GridImage> {
    model.check(estimate)?;
    model.check(aux)?;
    let mut tape = Tape::new(&model.theta);
    let out = record(&model.net, &mut tape, estimate, aux)?;
    // f32 sigmoid can round to exactly 0 or 1, never beyond
    Ok(tape.value(out).to_image(0).clipped(0.0, 1.0))
}

impl Refiner for TranslationModel {
    fn refine(&self, estimate: &GridImage, aux: &GridImage) -> Result<GridImage> {
        apply_translation(self, estimate, aux)
    }
}

/// Mean absolute error and its gradient with respect to `out`.
fn l1(out: &GridImage, target: &GridImage) -> Result<(f64, GridImage)> {
    let n = out.len() as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = out
        .values()
        .iter()
        .zip(target.values())
        .map(|(o, t)| {
            let d = o - t;
            loss += d.abs();
            d.signum() / n
        })
        .collect();
    Ok((loss / n, GridImage::from_vec(out.width(), out.height(), grad)?))
}

/// Generator loss/gradient for one sample; `extra` adds a gradient with
/// respect to the output (the adversarial term) and its loss.
fn generator_grad(
    net: &UNet,
    theta: &[f32],
    s: &PairedSample,
    extra: Option<&dyn Fn(&GridImage) -> Result<(f64, GridImage)>>,
) -> Result<(f64, Vec<f32>)> {
    let mut tape = Tape::new(theta);
    let out = record(net, &mut tape, &s.degraded_main, &s.degraded_aux)?;
    let img = tape.value(out).to_image(0);
    let (mut loss, mut grad) = l1(&img, &s.ideal_main)?;
    if let Some(extra) = extra {
        let (l, g) = extra(&img)?;
        loss += l;
        grad.axpy(1.0, &g);
    }
    let seed = Tensor::from_images(&[&grad]);
    Ok((loss, tape.backward(out, seed).params))
}

fn check_dataset(dataset: &[PairedSample], resolution: usize) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Config("translation dataset is empty".into()));
    }
    for s in dataset {
        for img in [&s.degraded_main, &s.degraded_aux, &s.ideal_main] {
            if img.width() != resolution || img.height() != resolution {
                return Err(Error::Dimension(format!(
                    "paired sample is {}x{}, model resolution is {resolution}",
                    img.width(),
                    img.height()
                )));
            }
        }
    }
    Ok(())
}

/// Trains `init` on `dataset`: L1 to `ideal_main`, plus a conditional
/// patch-GAN term when `adversarial_weight > 0`.
pub fn train_translation(
    dataset: &[PairedSample],
    config: &TranslationConfig,
    init: TranslationModel,
) -> Result<(TranslationModel, TrainLog)> {
    config.validate()?;
    check_dataset(dataset, init.resolution)?;
    let TranslationModel {
        net, theta, resolution, ..
    } = init;
    let (theta, log) = if config.adversarial_weight > 0.0 {
        train_adversarial(dataset, config, &net, theta)?
    } else {
        let (state, log) = train_translation_from(dataset, config, &net, TrainState::new(theta))?;
        (state.theta, log)
    };
    let model = TranslationModel::new(net.config().clone(), theta, resolution, config.clone())?;
    Ok((model, log))
}

/// Resumable L1-only training.
pub fn train_translation_from(
    dataset: &[PairedSample],
    config: &TranslationConfig,
    net: &UNet,
    state: TrainState,
) -> Result<(TrainState, TrainLog)> {
    if config.adversarial_weight > 0.0 {
        return Err(Error::Config("resumable training covers the L1 objective only".into()));
    }
    nn::train::run(dataset.len(), &config.train(), state, |theta, _step, _slot, i| {
        generator_grad(net, theta, &dataset[i], None)
    })
}

/// Three-conv conditional patch discriminator over (estimate, aux, image).
struct PatchDiscriminator {
    c: usize,
}

impl PatchDiscriminator {
    fn offsets(&self) -> [(usize, usize, usize, usize); 3] {
        let c = self.c;
        let w1 = 0;
        let b1 = w1 + 3 * c * 9;
        let w2 = b1 + c;
        let b2 = w2 + c * 2 * c * 9;
        let w3 = b2 + 2 * c;
        let b3 = w3 + 2 * c * 9;
        [(w1, b1, 3, c), (w2, b2, c, 2 * c), (w3, b3, 2 * c, 1)]
    }

    fn param_count(&self) -> usize {
        let [.., (w3, _, cin, _)] = self.offsets();
        w3 + cin * 9 + 1
    }

    fn init(&self, seed: u64) -> Vec<f32> {
        let mut theta = vec![0.0f32; self.param_count()];
        let mut rng = rng::stream(seed, &[tag::INIT, 0xd15c]);
        for (w, _, cin, cout) in self.offsets() {
            let bound = (3.0 / (cin * 9) as f64).sqrt();
            for v in &mut theta[w..w + cin * cout * 9] {
                *v = rng.gen_range(-bound..bound) as f32;
            }
        }
        theta
    }

    /// Logit map at quarter resolution.
    fn record(&self, tape: &mut Tape<'_, f32>, input: NodeId) -> NodeId {
        let [(w1, b1, i1, o1), (w2, b2, i2, o2), (w3, b3, i3, o3)] = self.offsets();
        let h = tape.conv3x3(input, w1, b1, i1, o1);
        let h = tape.leaky_relu(h, 0.2);
        let h = tape.avg_pool2(h);
        let h = tape.conv3x3(h, w2, b2, i2, o2);
        let h = tape.leaky_relu(h, 0.2);
        let h = tape.avg_pool2(h);
        tape.conv3x3(h, w3, b3, i3, o3)
    }

    /// Binary cross-entropy of the logits against `label`, with gradients for
    /// the discriminator parameters and the judged image (channel 2).
    fn judge(&self, phi: &[f32], s: &PairedSample, image: &GridImage, label: f64) -> Result<(f64, Vec<f32>, GridImage)> {
        let mut tape = Tape::new(phi);
        let est = s.degraded_main.clipped(0.0, 1.0);
        let input = tape.leaf(Tensor::from_images(&[&est, &s.degraded_aux, image]));
        let logits = self.record(&mut tape, input);
        let z = tape.value(logits);
        let n = z.data.len() as f64;
        let mut loss = 0.0;
        let dz: Vec<f32> = z
            .data
            .iter()
            .map(|&v| {
                let v = v as f64;
                // softplus(-v) for label 1, softplus(v) for label 0
                let signed = if label > 0.5 { -v } else { v };
                loss += signed.max(0.0) + (-signed.abs()).exp().ln_1p();
                let p = 1.0 / (1.0 + (-v).exp());
                ((p - label) / n) as f32
            })
            .collect();
        let seed = Tensor::from_vec(1, z.height, z.width, dz);
        let grads = tape.backward(logits, seed);
        let gin = grads.wrt(input).expect("input reaches the logits").to_image(2);
        Ok((loss / n, grads.params, gin))
    }
}

fn train_adversarial(
    dataset: &[PairedSample],
    config: &TranslationConfig,
    net: &UNet,
    mut theta: Vec<f32>,
) -> Result<(Vec<f32>, TrainLog)> {
    let train = config.train();
    let disc = PatchDiscriminator {
        c: config.discriminator_channels,
    };
    if dataset[0].ideal_main.width() % 4 != 0 {
        return Err(Error::Dimension("patch discriminator needs sizes divisible by 4".into()));
    }
    let mut phi = disc.init(config.seed);
    let mut g_opt = Optimizer::new(config.optimizer, config.lr, theta.len());
    let mut d_opt = Optimizer::new(OptimizerKind::Adam, config.discriminator_lr, phi.len());
    let per_epoch = train.steps_per_epoch(dataset.len());
    let total = train.total_steps(dataset.len());
    let w = config.adversarial_weight;
    let mut log = TrainLog::default();
    let mut perm = Vec::new();
    let (mut epoch_sum, mut epoch_n) = (0.0, 0usize);
    for step in 0..total {
        let epoch = step / per_epoch;
        if step % per_epoch == 0 {
            if epoch_n > 0 {
                log.epoch_losses.push(epoch_sum / epoch_n as f64);
                (epoch_sum, epoch_n) = (0.0, 0);
            }
            perm = nn::train::epoch_permutation(config.seed, epoch, dataset.len());
        }
        let b = (step % per_epoch) as usize * config.batch_size;
        let batch: Vec<&PairedSample> = perm[b..(b + config.batch_size).min(dataset.len())]
            .iter()
            .map(|&i| &dataset[i])
            .collect();
        let inv = 1.0 / batch.len() as f32;

        // discriminator: real pairs toward 1, current fakes toward 0
        let d_parts = batch
            .par_iter()
            .map(|s| {
                let fake = apply_raw(net, &theta, s)?;
                let (_, g_real, _) = disc.judge(&phi, s, &s.ideal_main, 1.0)?;
                let (_, g_fake, _) = disc.judge(&phi, s, &fake, 0.0)?;
                Ok(g_real.iter().zip(&g_fake).map(|(a, b)| a + b).collect::<Vec<f32>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let d_grad = mean_grads(&d_parts, phi.len(), inv);
        d_opt.step(&mut phi, &d_grad);

        // generator: L1 plus w * BCE(D(fake), 1)
        let g_parts = batch
            .par_iter()
            .map(|s| {
                let adv = |img: &GridImage| {
                    let (l, _, g) = disc.judge(&phi, s, img, 1.0)?;
                    Ok((w * l, g.map(|v| w * v)))
                };
                generator_grad(net, &theta, s, Some(&adv))
            })
            .collect::<Result<Vec<_>>>()?;
        let loss = g_parts.iter().map(|p| p.0).sum::<f64>() * inv as f64;
        let grads: Vec<Vec<f32>> = g_parts.into_iter().map(|p| p.1).collect();
        let g_grad = mean_grads(&grads, theta.len(), inv);
        if !loss.is_finite() || g_grad.iter().chain(&d_grad).any(|g| !g.is_finite()) {
            return Err(Error::Training {
                step: step as usize,
                last_finite: theta,
            });
        }
        g_opt.step(&mut theta, &g_grad);
        log.step_losses.push(loss);
        epoch_sum += loss;
        epoch_n += 1;
    }
    if epoch_n > 0 {
        log.epoch_losses.push(epoch_sum / epoch_n as f64);
    }
    Ok((theta, log))
}

fn apply_raw(net: &UNet, theta: &[f32], s: &PairedSample) -> Result<GridImage> {
    let mut tape = Tape::new(theta);
    let out = record(net, &mut tape, &s.degraded_main, &s.degraded_aux)?;
    Ok(tape.value(out).to_image(0))
}

fn mean_grads(parts: &[Vec<f32>], len: usize, inv: f32) -> Vec<f32> {
    let mut g = vec![0.0f32; len];
    for p in parts {
        for (a, b) in g.iter_mut().zip(p) {
            *a += *b;
        }
    }
    g.iter_mut().for_each(|v| *v *= inv);
    g
}

/// Seeded (train, validation) index split; `fraction` goes to validation.
pub fn validation_split(len: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng::stream(seed, &[tag::SPLIT]));
    let n_val = ((len as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let val = idx.split_off(len - n_val);
    (idx, val)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> TranslationModel {
        TranslationModel::init(UNetConfig::translator(4), 16, 0).unwrap()
    }

    #[test]
    fn rejects_wrong_resolution() {
        let m = model();
        let a = GridImage::zeros(8, 8);
        assert!(matches!(apply_translation(&m, &a, &a), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_inputs_give_bounded_output() {
        let m = model();
        let z = GridImage::zeros(16, 16);
        let out = apply_translation(&m, &z, &z).unwrap();
        assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn fresh_model_is_near_identity_inside_the_clamp() {
        let m = model();
        let est = GridImage::from_fn(16, 16, |r, c| 0.05 + 0.9 * ((r * 16 + c) as f64 / 255.0));
        let aux = GridImage::filled(16, 16, 0.7);
        let out = apply_translation(&m, &est, &aux).unwrap();
        for (o, e) in out.values().iter().zip(est.values()) {
            assert!((o - e).abs() < 1e-5, "{o} vs {e}");
        }
    }

    #[test]
    fn split_is_a_partition() {
        let (tr, va) = validation_split(50, 0.2, 3);
        assert_eq!(va.len(), 10);
        let mut all: Vec<_> = tr.iter().chain(&va).copied().collect();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(validation_split(50, 0.2, 3), (tr, va));
    }

    #[test]
    fn rejects_bad_architectures() {
        assert!(TranslationModel::init(UNetConfig::denoiser(4), 16, 0).is_err());
        assert!(TranslationModel::init(UNetConfig::translator(4), 6, 0).is_err());
    }
}
