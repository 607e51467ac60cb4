use super::{gaussian_image, noising_sample, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::grid::GridImage;
use crate::nn::{self, Tape, Tensor, TrainConfig, TrainLog, TrainState, UNet, UNetConfig};
use crate::rng::{self, tag};
use rand::Rng;

/// Noise predictor `eps_theta`: a U-Net plus its flat parameter vector.
#[derive(Debug, Clone)]
pub struct DenoiserParams {
    net: UNet,
    theta: Vec<f32>,
}

impl PartialEq for DenoiserParams {
    fn eq(&self, other: &Self) -> bool {
        self.net.config() == other.net.config() && self.theta == other.theta
    }
}

impl DenoiserParams {
    pub fn new(arch: UNetConfig, theta: Vec<f32>) -> Result<Self> {
        if arch.time_embed_dim == 0 {
            return Err(Error::Config("a denoiser needs a timestep embedding".into()));
        }
        if arch.in_channels != 1 || arch.out_channels != 1 {
            return Err(Error::Config("a denoiser maps one channel to one channel".into()));
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
            return Err(Error::Domain("denoiser parameters must be finite".into()));
        }
        Ok(Self { net, theta })
    }

    pub fn init(arch: UNetConfig, seed: u64) -> Result<Self> {
        let net = UNet::new(arch.clone())?;
        let theta = net.init_params(seed);
        Self::new(arch, theta)
    }

    pub fn arch(&self) -> &UNetConfig {
        self.net.config()
    }

    pub fn net(&self) -> &UNet {
        &self.net
    }

    pub fn theta(&self) -> &[f32] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f32] {
        &mut self.theta
    }

    pub fn into_theta(self) -> Vec<f32> {
        self.theta
    }

    /// Predicts noise, hands it to `head` (which returns a loss and the loss
    /// gradient with respect to the prediction), then back-propagates to
    /// the parameters. Returns the loss and `dLoss/dtheta`.
    pub fn eps_with_grad(
        &self,
        xt: &GridImage,
        t: usize,
        head: impl FnOnce(&GridImage) -> Result<(f64, GridImage)>,
    ) -> Result<(f64, Vec<f32>)> {
        eps_with_grad(&self.net, &self.theta, xt, t, head)
    }
}

impl NoisePredictor for DenoiserParams {
    fn predict_eps(&self, xt: &GridImage, t: usize) -> Result<GridImage> {
        let mut tape = Tape::new(&self.theta);
        let x = tape.leaf(Tensor::<f32>::from_images(&[xt]));
        let y = self.net.forward(&mut tape, x, Some(t as f64))?;
        Ok(tape.value(y).to_image(0))
    }
}

fn eps_with_grad(
    net: &UNet,
    theta: &[f32],
    xt: &GridImage,
    t: usize,
    head: impl FnOnce(&GridImage) -> Result<(f64, GridImage)>,
) -> Result<(f64, Vec<f32>)> {
    let mut tape = Tape::new(theta);
    let x = tape.leaf(Tensor::<f32>::from_images(&[xt]));
    let y = net.forward(&mut tape, x, Some(t as f64))?;
    let eps = tape.value(y).to_image(0);
    let (loss, dloss) = head(&eps)?;
    eps.ensure_same_shape(&dloss)?;
    let seed = Tensor::<f32>::from_images(&[&dloss]);
    Ok((loss, tape.backward(y, seed).params))
}

/// Denoising score matching on `dataset`, starting from `init`.
///
/// Each sample draws `t` uniformly from `1..=t_max` (the whole schedule if
/// `None`) and a fresh Gaussian `eps`; the loss is the per-pixel mean of
/// `(eps_theta(x_t, t) - eps)^2`.
pub fn train_denoiser(
    dataset: &[GridImage],
    sched: &NoiseSchedule,
    config: &TrainConfig,
    t_max: Option<usize>,
    init: DenoiserParams,
) -> Result<(DenoiserParams, TrainLog)> {
    let arch = init.arch().clone();
    let (state, log) = train_denoiser_from(dataset, sched, config, t_max, &init.net, TrainState::new(init.theta))?;
    Ok((DenoiserParams::new(arch, state.theta)?, log))
}

/// Resumable form of [`train_denoiser`].
pub fn train_denoiser_from(
    dataset: &[GridImage],
    sched: &NoiseSchedule,
    config: &TrainConfig,
    t_max: Option<usize>,
    net: &UNet,
    state: TrainState,
) -> Result<(TrainState, TrainLog)> {
    let t_max = t_max.unwrap_or(sched.len());
    if t_max == 0 || t_max > sched.len() {
        return Err(Error::Config(format!("t_max {t_max} outside [1, {}]", sched.len())));
    }
    if let Some(first) = dataset.first() {
        if let Some(bad) = dataset.iter().find(|img| !img.same_shape(first)) {
            return Err(Error::Dimension(format!(
                "training images differ in shape: {}x{} vs {}x{}",
                first.width(),
                first.height(),
                bad.width(),
                bad.height()
            )));
        }
    }
    nn::train::run(dataset.len(), config, state, |theta, step, slot, index| {
        let x0 = &dataset[index];
        let mut rng = rng::stream(config.seed, &[tag::TRAIN, step, slot as u64]);
        let t = rng.gen_range(1..=t_max);
        let eps = gaussian_image(x0.width(), x0.height(), &mut rng);
        let xt = noising_sample(x0, t, &eps, sched)?;
        let n = x0.len() as f64;
        eps_with_grad(net, theta, &xt, t, |pred| {
            let resid: Vec<f64> = pred.values().iter().zip(eps.values()).map(|(p, e)| p - e).collect();
            let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
            let grad = GridImage::from_vec(pred.width(), pred.height(), resid.iter().map(|r| 2.0 * r / n).collect())?;
            Ok((loss, grad))
        })
    })
}
