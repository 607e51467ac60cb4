//! Tape gradients against central finite differences, in double precision.

use rand::Rng;
use xmct::nn::{Tape, Tensor, UNet, UNetConfig};

fn tiny_config() -> UNetConfig {
    UNetConfig {
        in_channels: 1,
        out_channels: 1,
        base_channels: 2,
        channel_mults: vec![1, 2],
        time_embed_dim: 4,
    }
}

/// 0.5 * ||net(x) - target||^2 and its tape gradients.
fn loss(net: &UNet, theta: &[f64], x: &Tensor<f64>, target: &[f64], t: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new(theta);
    let input = tape.leaf(x.clone());
    let out = net.forward(&mut tape, input, Some(t)).unwrap();
    let y = tape.value(out);
    let resid: Vec<f64> = y.data.iter().zip(target).map(|(a, b)| a - b).collect();
    let l = 0.5 * resid.iter().map(|r| r * r).sum::<f64>();
    let seed = Tensor::from_vec(y.channels, y.height, y.width, resid);
    let grads = tape.backward(out, seed);
    let gx = grads.wrt(input).unwrap().data.clone();
    (l, grads.params, gx)
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn parameter_and_input_gradients_match_finite_differences() {
    let net = UNet::new(tiny_config()).unwrap();
    assert!(net.param_count() <= 1000, "{} parameters", net.param_count());
    let mut rng = xmct::rng::stream(2024, &[]);
    // random everywhere, including the zero-initialized output layer
    let theta: Vec<f64> = net
        .init_params(1)
        .iter()
        .map(|&w| w as f64 + rng.gen_range(-0.3..0.3))
        .collect();
    let x = Tensor::from_vec(1, 8, 8, (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let target: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let t = 37.0;

    let (_, g_theta, g_x) = loss(&net, &theta, &x, &target, t);
    let h = 1e-4;

    let mut good = 0;
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus[i] += h;
        let mut minus = theta.clone();
        minus[i] -= h;
        let fd = (loss(&net, &plus, &x, &target, t).0 - loss(&net, &minus, &x, &target, t).0) / (2.0 * h);
        if relative_error(g_theta[i], fd) <= 1e-3 {
            good += 1;
        }
    }
    let frac = good as f64 / theta.len() as f64;
    assert!(frac >= 0.95, "only {:.1}% of parameter gradients agree", 100.0 * frac);

    let mut good = 0;
    for i in 0..64 {
        let mut xp = x.clone();
        xp.data[i] += h;
        let mut xm = x.clone();
        xm.data[i] -= h;
        let fd = (loss(&net, &theta, &xp, &target, t).0 - loss(&net, &theta, &xm, &target, t).0) / (2.0 * h);
        if relative_error(g_x[i], fd) <= 1e-3 {
            good += 1;
        }
    }
    assert!(good >= 61, "only {good}/64 input gradients agree");
}

#[test]
fn every_layer_kind_differentiates() {
    // a hand-built graph touching the ops the U-Net does not use
    // irrational values keep pre-activations away from the leaky-relu kink
    let theta: Vec<f64> = (0..(2 * 2 * 9 + 2)).map(|i| (i as f64 * 1.618).sin() * 0.5).collect();
    let x0: Vec<f64> = (0..32).map(|i| (i as f64 * 2.718).cos()).collect();
    let eval = |theta: &[f64], x: &[f64]| {
        let mut tape = Tape::new(theta);
        let input = tape.leaf(Tensor::from_vec(2, 4, 4, x.to_vec()));
        let c = tape.conv3x3(input, 0, 36, 2, 2);
        let a = tape.leaky_relu(c, 0.2);
        let s = tape.sigmoid(a);
        let sum = tape.add(s, input);
        let out = sum;
        let v = tape.value(out).data.clone();
        let l: f64 = v.iter().enumerate().map(|(i, y)| (i as f64 + 1.0) * y).sum();
        let seed = Tensor::from_vec(2, 4, 4, (0..32).map(|i| i as f64 + 1.0).collect());
        let g = tape.backward(out, seed);
        (l, g.params.clone(), g.wrt(input).unwrap().data.clone())
    };
    let (_, gp, gx) = eval(&theta, &x0);
    let h = 1e-6;
    for i in 0..theta.len() {
        let mut p = theta.clone();
        p[i] += h;
        let mut m = theta.clone();
        m[i] -= h;
        let fd = (eval(&p, &x0).0 - eval(&m, &x0).0) / (2.0 * h);
        assert!(relative_error(gp[i], fd) < 1e-4, "param {i}: {} vs {fd}", gp[i]);
    }
    for i in 0..32 {
        let mut p = x0.clone();
        p[i] += h;
        let mut m = x0.clone();
        m[i] -= h;
        let fd = (eval(&theta, &p).0 - eval(&theta, &m).0) / (2.0 * h);
        assert!(relative_error(gx[i], fd) < 1e-4, "input {i}: {} vs {fd}", gx[i]);
    }
}
