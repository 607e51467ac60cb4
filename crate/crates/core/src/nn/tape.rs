use super::{axpy, dot, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Conv3x3 {
        x: NodeId,
        weight: usize,
        bias: usize,
        cin: usize,
        cout: usize,
    },
    Linear {
        x: NodeId,
        weight: usize,
        bias: usize,
        n_in: usize,
        n_out: usize,
    },
    AddChannelBias {
        x: NodeId,
        bias: NodeId,
    },
    Silu(NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    AvgPool2(NodeId),
    Upsample2(NodeId),
    Concat(NodeId, NodeId),
    Add(NodeId, NodeId),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op,
}

/// Records a forward pass over a flat parameter vector and replays it
/// backwards.
///
/// Parameters are addressed by offset into the slice the tape was created
/// with; gradients come back in the same layout.
pub struct Tape<'p, F> {
    params: &'p [F],
    nodes: Vec<Node<F>>,
}

/// Result of [`Tape::backward`].
pub struct Gradients<F> {
    pub params: Vec<F>,
    nodes: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient with respect to a leaf node, `None` if no path reached it.
    /// Intermediate gradients are released during the backward sweep.
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor<F>> {
        self.nodes[node.0].as_ref()
    }
}

fn silu<F: Real>(x: F) -> F {
    x / (F::one() + (-x).exp())
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl<'p, F: Real> Tape<'p, F> {
    pub fn new(params: &'p [F]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, node: NodeId) -> &Tensor<F> {
        &self.nodes[node.0].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// An input or constant.
    pub fn leaf(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Same-padded 3x3 convolution. Weights are `[cout][cin][3][3]` at
    /// `weight`, biases `[cout]` at `bias`.
    pub fn conv3x3(&mut self, x: NodeId, weight: usize, bias: usize, cin: usize, cout: usize) -> NodeId {
        let input = &self.nodes[x.0].value;
        assert_eq!(input.channels, cin, "conv input channels");
        let (h, w) = (input.height, input.width);
        let mut out = Tensor::zeros(cout, h, w);
        let wts = &self.params[weight..weight + cout * cin * 9];
        for co in 0..cout {
            let plane = out.channel_mut(co);
            plane.fill(self.params[bias + co]);
            for ci in 0..cin {
                let src = input.channel(ci);
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = wts[((co * cin + ci) * 3 + ky) * 3 + kx];
                        if k == F::zero() {
                            continue;
                        }
                        let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                        let (y0, y1) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let dst = &mut plane[y * w + x0..y * w + x1];
                            let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                            axpy(dst, k, s);
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Conv3x3 {
                x,
                weight,
                bias,
                cin,
                cout,
            },
        )
    }

    /// Dense layer on a vector node; weights `[n_out][n_in]`.
    pub fn linear(&mut self, x: NodeId, weight: usize, bias: usize, n_in: usize, n_out: usize) -> NodeId {
        let input = &self.nodes[x.0].value;
        assert_eq!(input.data.len(), n_in, "linear input width");
        let out: Vec<F> = (0..n_out)
            .map(|o| self.params[bias + o] + dot(&self.params[weight + o * n_in..weight + (o + 1) * n_in], &input.data))
            .collect();
        self.push(
            Tensor::vector(out),
            Op::Linear {
                x,
                weight,
                bias,
                n_in,
                n_out,
            },
        )
    }

    /// Adds a per-channel vector node to every pixel of `x`.
    pub fn add_channel_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let mut out = self.nodes[x.0].value.clone();
        let b = &self.nodes[bias.0].value.data;
        assert_eq!(b.len(), out.channels, "channel bias width");
        for c in 0..out.channels {
            let v = b[c];
            out.channel_mut(c).iter_mut().for_each(|p| *p += v);
        }
        self.push(out, Op::AddChannelBias { x, bias })
    }

    fn map(&mut self, x: NodeId, f: impl Fn(F) -> F, op: Op) -> NodeId {
        let src = &self.nodes[x.0].value;
        let out = Tensor::from_vec(
            src.channels,
            src.height,
            src.width,
            src.data.iter().map(|&v| f(v)).collect(),
        );
        self.push(out, op)
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        self.map(x, silu, Op::Silu(x))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let s = F::lit(slope);
        self.map(x, move |v| if v > F::zero() { v } else { s * v }, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> NodeId {
        let src = &self.nodes[x.0].value;
        let (h, w) = (src.height / 2, src.width / 2);
        let quarter = F::lit(0.25);
        let mut out = Tensor::zeros(src.channels, h, w);
        for c in 0..src.channels {
            let s = src.channel(c);
            let sw = src.width;
            let d = out.channel_mut(c);
            for y in 0..h {
                for xx in 0..w {
                    let i = 2 * y * sw + 2 * xx;
                    d[y * w + xx] = quarter * (s[i] + s[i + 1] + s[i + sw] + s[i + sw + 1]);
                }
            }
        }
        self.push(out, Op::AvgPool2(x))
    }

    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let src = &self.nodes[x.0].value;
        let (h, w) = (src.height * 2, src.width * 2);
        let mut out = Tensor::zeros(src.channels, h, w);
        for c in 0..src.channels {
            let s = src.channel(c);
            let d = out.channel_mut(c);
            for y in 0..h {
                for xx in 0..w {
                    d[y * w + xx] = s[(y / 2) * src.width + xx / 2];
                }
            }
        }
        self.push(out, Op::Upsample2(x))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((va.height, va.width), (vb.height, vb.width), "concat spatial shape");
        let mut data = va.data.clone();
        data.extend_from_slice(&vb.data);
        let out = Tensor::from_vec(va.channels + vb.channels, va.height, va.width, data);
        self.push(out, Op::Concat(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.nodes[a.0].value.clone();
        assert!(out.same_shape(&self.nodes[b.0].value), "add shape");
        out.add_assign(&self.nodes[b.0].value);
        self.push(out, Op::Add(a, b))
    }

    /// Back-propagates `seed` (dLoss/d`output`) through everything recorded
    /// up to and including `output`.
    pub fn backward(&self, output: NodeId, seed: Tensor<F>) -> Gradients<F> {
        assert!(seed.same_shape(&self.nodes[output.0].value), "seed gradient shape");
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut pgrad = vec![F::zero(); self.params.len()];
        grads[output.0] = Some(seed);

        fn accumulate<F: Real>(slot: &mut Option<Tensor<F>>, g: Tensor<F>) {
            match slot {
                Some(t) => t.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match node.op {
                Op::Leaf => unreachable!(),
                Op::Conv3x3 {
                    x,
                    weight,
                    bias,
                    cin,
                    cout,
                } => {
                    let input = &self.nodes[x.0].value;
                    let (h, w) = (input.height, input.width);
                    let mut gin = Tensor::zeros(cin, h, w);
                    for co in 0..cout {
                        let gplane = g.channel(co);
                        pgrad[bias + co] += gplane.iter().copied().sum::<F>();
                        for ci in 0..cin {
                            let src = input.channel(ci);
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                                    let k = self.params[weight + widx];
                                    let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                                    let (y0, y1) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
                                    let mut acc = F::zero();
                                    let gi = gin.channel_mut(ci);
                                    for y in y0..y1 {
                                        let sy = y + ky - 1;
                                        let go = &gplane[y * w + x0..y * w + x1];
                                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                                        acc += dot(go, s);
                                        axpy(&mut gi[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1], k, go);
                                    }
                                    pgrad[weight + widx] += acc;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gin);
                }
                Op::Linear {
                    x,
                    weight,
                    bias,
                    n_in,
                    n_out,
                } => {
                    let input = &self.nodes[x.0].value.data;
                    let mut gin = vec![F::zero(); n_in];
                    for o in 0..n_out {
                        let go = g.data[o];
                        pgrad[bias + o] += go;
                        let row = weight + o * n_in;
                        axpy(&mut pgrad[row..row + n_in], go, input);
                        axpy(&mut gin, go, &self.params[row..row + n_in]);
                    }
                    accumulate(&mut grads[x.0], Tensor::vector(gin));
                }
                Op::AddChannelBias { x, bias } => {
                    let gb: Vec<F> = (0..g.channels).map(|c| g.channel(c).iter().copied().sum()).collect();
                    accumulate(&mut grads[bias.0], Tensor::vector(gb));
                    accumulate(&mut grads[x.0], g);
                }
                Op::Silu(x) => {
                    let src = &self.nodes[x.0].value;
                    let mut gin = g;
                    for (gv, &v) in gin.data.iter_mut().zip(&src.data) {
                        let s = sigmoid(v);
                        *gv *= s * (F::one() + v * (F::one() - s));
                    }
                    accumulate(&mut grads[x.0], gin);
                }
                Op::LeakyRelu(x, slope) => {
                    let src = &self.nodes[x.0].value;
                    let s = F::lit(slope);
                    let mut gin = g;
                    for (gv, &v) in gin.data.iter_mut().zip(&src.data) {
                        if v <= F::zero() {
                            *gv *= s;
                        }
                    }
                    accumulate(&mut grads[x.0], gin);
                }
                Op::Sigmoid(x) => {
                    let mut gin = g;
                    for (gv, &y) in gin.data.iter_mut().zip(&node.value.data) {
                        *gv *= y * (F::one() - y);
                    }
                    accumulate(&mut grads[x.0], gin);
                }
                Op::AvgPool2(x) => {
                    let src = &self.nodes[x.0].value;
                    let quarter = F::lit(0.25);
                    let mut gin = Tensor::zeros(src.channels, src.height, src.width);
                    for c in 0..src.channels {
                        let go = g.channel(c);
                        let d = gin.channel_mut(c);
                        for y in 0..src.height {
                            for xx in 0..src.width {
                                d[y * src.width + xx] = quarter * go[(y / 2) * g.width + xx / 2];
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gin);
                }
                Op::Upsample2(x) => {
                    let src = &self.nodes[x.0].value;
                    let mut gin = Tensor::zeros(src.channels, src.height, src.width);
                    for c in 0..src.channels {
                        let go = g.channel(c);
                        let d = gin.channel_mut(c);
                        for y in 0..g.height {
                            for xx in 0..g.width {
                                d[(y / 2) * src.width + xx / 2] += go[y * g.width + xx];
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gin);
                }
                Op::Concat(a, b) => {
                    let va = &self.nodes[a.0].value;
                    let split = va.data.len();
                    let ga = Tensor::from_vec(va.channels, va.height, va.width, g.data[..split].to_vec());
                    let vb = &self.nodes[b.0].value;
                    let gb = Tensor::from_vec(vb.channels, vb.height, vb.width, g.data[split..].to_vec());
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
            }
        }
        Gradients {
            params: pgrad,
            nodes: grads,
        }
    }
}
