use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Plain gradient descent, no momentum.
    #[default]
    Sgd,
    /// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Everything needed to continue an optimization bit-exactly.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<f32>,
    pub second_moment: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, param_count: usize) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => param_count,
        };
        Self {
            kind,
            lr,
            state: OptimizerState {
                step: 0,
                first_moment: vec![0.0; moments],
                second_moment: vec![0.0; moments],
            },
        }
    }

    pub fn with_state(kind: OptimizerKind, lr: f64, state: OptimizerState) -> Self {
        Self { kind, lr, state }
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step(&mut self, theta: &mut [f32], grad: &[f32]) {
        debug_assert_eq!(theta.len(), grad.len());
        self.state.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = self.lr as f32;
                for (p, g) in theta.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let t = self.state.step as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                let (b1, b2) = (BETA1 as f32, BETA2 as f32);
                let step = (self.lr * c2.sqrt() / c1) as f32;
                let eps = (EPS * c2.sqrt()) as f32;
                let s = &mut self.state;
                for ((p, g), (m, v)) in theta
                    .iter_mut()
                    .zip(grad)
                    .zip(s.first_moment.iter_mut().zip(s.second_moment.iter_mut()))
                {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step * *m / (v.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_moves_against_gradient() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5, 2);
        let mut theta = [1.0f32, -1.0];
        opt.step(&mut theta, &[2.0, -2.0]);
        assert_eq!(theta, [0.0, 0.0]);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05, 1);
        let mut theta = [3.0f32];
        for _ in 0..500 {
            let g = [2.0 * (theta[0] - 1.0)];
            opt.step(&mut theta, &g);
        }
        assert!((theta[0] - 1.0).abs() < 1e-2, "{}", theta[0]);
    }
}
