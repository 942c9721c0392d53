//! AdamW with decoupled weight decay.
//!
//! ```text
//! w  <- w * (1 - lr * wd)                         weights only
//! m  <- b1 * m + (1 - b1) * g
//! v  <- b2 * v + (1 - b2) * g^2
//! p  <- p - (lr / (1 - b1^t)) * m / (sqrt(v) / sqrt(1 - b2^t) + eps)
//! ```
//!
//! Decay factors are clamped to [0, 1] after every step.

use ndarray::{Array1, Zip};
use serde::{Deserialize, Serialize};

use super::backward::Gradients;
use crate::network::NetworkParams;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// When false the decay factors are left untouched.
    pub train_tau: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            train_tau: true,
        }
    }
}

/// Moment estimates, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<F> {
    pub step: u64,
    pub first: Gradients<F>,
    pub second: Gradients<F>,
}

impl<F: Real> AdamWState<F> {
    pub fn new(params: &NetworkParams<F>) -> Self {
        Self {
            step: 0,
            first: Gradients::zeros_like(params),
            second: Gradients::zeros_like(params),
        }
    }
}

struct StepConsts<F> {
    beta1: F,
    beta2: F,
    step_size: F,
    bias2_sqrt: F,
    eps: F,
}

impl<F: Real> StepConsts<F> {
    #[inline]
    fn update(&self, p: &mut F, g: F, m: &mut F, v: &mut F) {
        *m = self.beta1 * *m + (F::one() - self.beta1) * g;
        *v = self.beta2 * *v + (F::one() - self.beta2) * g * g;
        let denom = v.sqrt() / self.bias2_sqrt + self.eps;
        *p -= self.step_size * *m / denom;
    }

    fn update_vec(&self, p: &mut Array1<F>, g: &Array1<F>, m: &mut Array1<F>, v: &mut Array1<F>) {
        Zip::from(p)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| self.update(p, g, m, v));
    }
}

/// One optimizer step; updates `params` and `state` in place.
pub fn adamw_step<F: Real>(
    params: &mut NetworkParams<F>,
    grads: &Gradients<F>,
    state: &mut AdamWState<F>,
    config: &AdamWConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let lr = config.learning_rate;
    let consts = StepConsts {
        beta1: F::lit(config.beta1),
        beta2: F::lit(config.beta2),
        step_size: F::lit(lr / (1.0 - config.beta1.powi(t))),
        bias2_sqrt: F::lit((1.0 - config.beta2.powi(t)).sqrt()),
        eps: F::lit(config.eps),
    };
    let decay = F::lit(1.0 - lr * config.weight_decay);

    for (l, layer) in params.layers.iter_mut().enumerate() {
        let g = &grads.layers[l];
        let m = &mut state.first.layers[l];
        let v = &mut state.second.layers[l];

        layer.weight.mapv_inplace(|w| w * decay);
        Zip::from(&mut layer.weight)
            .and(&g.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .for_each(|p, &g, m, v| consts.update(p, g, m, v));

        if config.train_tau {
            consts.update_vec(&mut layer.tau, &g.tau, &mut m.tau, &mut v.tau);
        }
        if let Some(norm) = layer.norm.as_mut() {
            let parts = [
                (&mut norm.gamma, g.gamma.as_ref(), m.gamma.as_mut(), v.gamma.as_mut()),
                (&mut norm.beta, g.beta.as_ref(), m.beta.as_mut(), v.beta.as_mut()),
            ];
            for (p, g, m, v) in parts {
                if let (Some(g), Some(m), Some(v)) = (g, m, v) {
                    consts.update_vec(p, g, m, v);
                }
            }
        }
    }
    params.clamp_tau();
}
