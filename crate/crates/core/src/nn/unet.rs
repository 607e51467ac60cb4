use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NodeId, Real, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Shape of a U-shaped convolutional network.
///
/// Level `l` runs at `1/2^l` resolution with `base_channels * channel_mults[l]`
/// channels. Each level holds one block (conv, optional timestep bias, SiLU,
/// conv, SiLU); the decoder mirrors the encoder with skip concatenation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    /// Width of the sinusoidal timestep embedding; 0 disables conditioning.
    pub time_embed_dim: usize,
}

impl UNetConfig {
    /// Three-level noise predictor used for the diffusion prior.
    pub fn denoiser(base_channels: usize) -> Self {
        Self {
            in_channels: 1,
            out_channels: 1,
            base_channels,
            channel_mults: vec![1, 2, 2],
            time_embed_dim: 32,
        }
    }

    /// Two-input translator without timestep conditioning.
    pub fn translator(base_channels: usize) -> Self {
        Self {
            in_channels: 2,
            out_channels: 1,
            base_channels,
            channel_mults: vec![1, 2, 2],
            time_embed_dim: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvSlot {
    weight: usize,
    bias: usize,
    cin: usize,
    cout: usize,
}

#[derive(Debug, Clone, Copy)]
struct LinearSlot {
    weight: usize,
    bias: usize,
    n_in: usize,
    n_out: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    conv1: ConvSlot,
    conv2: ConvSlot,
    time: Option<LinearSlot>,
}

#[derive(Default)]
struct Allocator {
    next: usize,
}

impl Allocator {
    fn take(&mut self, n: usize) -> usize {
        let at = self.next;
        self.next += n;
        at
    }

    fn conv(&mut self, cin: usize, cout: usize) -> ConvSlot {
        ConvSlot {
            weight: self.take(cout * cin * 9),
            bias: self.take(cout),
            cin,
            cout,
        }
    }

    fn linear(&mut self, n_in: usize, n_out: usize) -> LinearSlot {
        LinearSlot {
            weight: self.take(n_in * n_out),
            bias: self.take(n_out),
            n_in,
            n_out,
        }
    }

    fn block(&mut self, cin: usize, cout: usize, time_hidden: Option<usize>) -> Block {
        Block {
            conv1: self.conv(cin, cout),
            time: time_hidden.map(|h| self.linear(h, cout)),
            conv2: self.conv(cout, cout),
        }
    }
}

/// A [`UNetConfig`] with its parameter layout resolved.
#[derive(Debug, Clone)]
pub struct UNet {
    config: UNetConfig,
    time_mlp: Option<LinearSlot>,
    in_conv: ConvSlot,
    encoder: Vec<Block>,
    decoder: Vec<Block>,
    out_conv: ConvSlot,
    param_count: usize,
}

pub fn sinusoidal_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        out[k] = (t * freq).sin();
        out[half + k] = (t * freq).cos();
    }
    out
}

impl UNet {
    pub fn new(config: UNetConfig) -> Result<Self> {
        if config.in_channels == 0 || config.out_channels == 0 || config.base_channels == 0 {
            return Err(Error::Config("network channel counts must be positive".into()));
        }
        if config.channel_mults.is_empty() || config.channel_mults.contains(&0) {
            return Err(Error::Config("channel_mults must be non-empty and positive".into()));
        }
        if config.time_embed_dim % 2 != 0 {
            return Err(Error::Config("time_embed_dim must be even".into()));
        }
        let mut alloc = Allocator::default();
        let width = |l: usize| config.base_channels * config.channel_mults[l];
        let hidden = (config.time_embed_dim > 0).then_some(4 * config.base_channels);
        let time_mlp = hidden.map(|h| alloc.linear(config.time_embed_dim, h));
        let in_conv = alloc.conv(config.in_channels, width(0));
        let levels = config.channel_mults.len();
        let mut encoder = Vec::with_capacity(levels);
        let mut ch = width(0);
        for l in 0..levels {
            encoder.push(alloc.block(ch, width(l), hidden));
            ch = width(l);
        }
        let mut decoder = Vec::with_capacity(levels.saturating_sub(1));
        for l in (0..levels - 1).rev() {
            decoder.push(alloc.block(ch + width(l), width(l), hidden));
            ch = width(l);
        }
        let out_conv = alloc.conv(ch, config.out_channels);
        Ok(Self {
            config,
            time_mlp,
            in_conv,
            encoder,
            decoder,
            out_conv,
            param_count: alloc.next,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.config.channel_mults.len() - 1)
    }

    /// Uniform fan-in scaled weights, zero biases, zero output layer.
    pub fn init_params(&self, seed: u64) -> Vec<f32> {
        let mut theta = vec![0.0f32; self.param_count];
        let mut rng = rng::stream(seed, &[tag::INIT]);
        let fill_conv = |theta: &mut [f32], slot: &ConvSlot, rng: &mut rand_chacha::ChaCha8Rng| {
            let bound = (3.0 / (slot.cin * 9) as f64).sqrt();
            for w in &mut theta[slot.weight..slot.weight + slot.cin * slot.cout * 9] {
                *w = rng.gen_range(-bound..bound) as f32;
            }
        };
        let fill_linear = |theta: &mut [f32], slot: &LinearSlot, rng: &mut rand_chacha::ChaCha8Rng| {
            let bound = (3.0 / slot.n_in as f64).sqrt();
            for w in &mut theta[slot.weight..slot.weight + slot.n_in * slot.n_out] {
                *w = rng.gen_range(-bound..bound) as f32;
            }
        };
        if let Some(slot) = &self.time_mlp {
            fill_linear(&mut theta, slot, &mut rng);
        }
        fill_conv(&mut theta, &self.in_conv, &mut rng);
        for block in self.encoder.iter().chain(&self.decoder) {
            fill_conv(&mut theta, &block.conv1, &mut rng);
            if let Some(slot) = &block.time {
                fill_linear(&mut theta, slot, &mut rng);
            }
            fill_conv(&mut theta, &block.conv2, &mut rng);
        }
        theta
    }

    fn check_input(&self, t: &Tensor<impl Real>) -> Result<()> {
        let m = self.size_multiple();
        if t.channels != self.config.in_channels {
            return Err(Error::Dimension(format!(
                "network expects {} input channels, got {}",
                self.config.in_channels, t.channels
            )));
        }
        if t.height % m != 0 || t.width % m != 0 || t.height == 0 {
            return Err(Error::Dimension(format!(
                "{}x{} input is not a multiple of {m}",
                t.height, t.width
            )));
        }
        Ok(())
    }

    /// Records the network on `tape` for input node `x` and returns the output
    /// node. `timestep` is required iff the config has a time embedding.
    pub fn forward<F: Real>(&self, tape: &mut Tape<'_, F>, x: NodeId, timestep: Option<f64>) -> Result<NodeId> {
        self.check_input(tape.value(x))?;
        let temb = match (&self.time_mlp, timestep) {
            (Some(slot), Some(t)) => {
                let e: Vec<F> = sinusoidal_embedding(t, self.config.time_embed_dim)
                    .into_iter()
                    .map(F::lit)
                    .collect();
                let e = tape.leaf(Tensor::vector(e));
                let h = tape.linear(e, slot.weight, slot.bias, slot.n_in, slot.n_out);
                Some(tape.silu(h))
            }
            (None, None) => None,
            (Some(_), None) => return Err(Error::Config("time-conditioned network needs a timestep".into())),
            (None, Some(_)) => return Err(Error::Config("network has no timestep input".into())),
        };
        let block = |tape: &mut Tape<'_, F>, b: &Block, h: NodeId| {
            let mut y = tape.conv3x3(h, b.conv1.weight, b.conv1.bias, b.conv1.cin, b.conv1.cout);
            if let (Some(slot), Some(e)) = (&b.time, temb) {
                let bias = tape.linear(e, slot.weight, slot.bias, slot.n_in, slot.n_out);
                y = tape.add_channel_bias(y, bias);
            }
            let y = tape.silu(y);
            let y = tape.conv3x3(y, b.conv2.weight, b.conv2.bias, b.conv2.cin, b.conv2.cout);
            tape.silu(y)
        };

        let c = &self.in_conv;
        let mut h = tape.conv3x3(x, c.weight, c.bias, c.cin, c.cout);
        let levels = self.encoder.len();
        let mut skips = Vec::with_capacity(levels);
        for (l, b) in self.encoder.iter().enumerate() {
            h = block(tape, b, h);
            if l + 1 < levels {
                skips.push(h);
                h = tape.avg_pool2(h);
            }
        }
        for b in &self.decoder {
            let up = tape.upsample2(h);
            let skip = skips.pop().expect("one skip per decoder level");
            let cat = tape.concat(up, skip);
            h = block(tape, b, cat);
        }
        let c = &self.out_conv;
        Ok(tape.conv3x3(h, c.weight, c.bias, c.cin, c.cout))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_denoiser_is_about_a_hundred_thousand_parameters() {
        let net = UNet::new(UNetConfig::denoiser(16)).unwrap();
        let n = net.param_count();
        assert!((50_000..150_000).contains(&n), "{n}");
    }

    #[test]
    fn zero_output_layer_gives_zero_prediction() {
        let net = UNet::new(UNetConfig::denoiser(4)).unwrap();
        let theta = net.init_params(3);
        let mut tape = Tape::new(&theta);
        let x = tape.leaf(Tensor::from_vec(1, 8, 8, (0..64).map(|i| i as f32 / 64.0).collect()));
        let y = net.forward(&mut tape, x, Some(10.0)).unwrap();
        assert!(tape.value(y).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_shapes_and_timesteps() {
        let net = UNet::new(UNetConfig::denoiser(2)).unwrap();
        let theta = net.init_params(0);
        let mut tape = Tape::new(&theta);
        let odd = tape.leaf(Tensor::<f32>::zeros(1, 6, 6));
        assert!(net.forward(&mut tape, odd, Some(1.0)).is_err());
        let ok = tape.leaf(Tensor::<f32>::zeros(1, 8, 8));
        assert!(net.forward(&mut tape, ok, None).is_err());
        let two = tape.leaf(Tensor::<f32>::zeros(2, 8, 8));
        assert!(net.forward(&mut tape, two, Some(1.0)).is_err());
    }
}
