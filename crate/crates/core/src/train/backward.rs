//! Reverse pass through the unfolded network.
//!
//! Layers are visited last to first and, within a layer, timesteps last to
//! first. The spike nonlinearity contributes the box surrogate; the reset
//! term `-tau * v_th * s(t-1)` is differentiated through `s(t-1)` as well.

use ndarray::{Array1, Array2, ArrayView2};

use super::loss::loss_grad;
use crate::error::{Error, Result};
use crate::lif::{ResetMode, Surrogate};
use crate::network::{
    clamp_unit, matmul_transposed, weight_grad, Mode, NetworkParams, NetworkSpec, ParamKind, TrainingCache,
};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad<F> {
    pub weight: Array2<F>,
    pub tau: Array1<F>,
    pub gamma: Option<Array1<F>>,
    pub beta: Option<Array1<F>>,
}

/// Loss gradients with the same layout as [`NetworkParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F> {
    pub layers: Vec<LayerGrad<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(params: &NetworkParams<F>) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    tau: Array1::zeros(l.tau.len()),
                    gamma: l.norm.as_ref().map(|n| Array1::zeros(n.width())),
                    beta: l.norm.as_ref().map(|n| Array1::zeros(n.width())),
                })
                .collect(),
        }
    }

    pub fn slice(&self, layer: usize, kind: ParamKind) -> Option<&[F]> {
        let l = self.layers.get(layer)?;
        match kind {
            ParamKind::Weight => l.weight.as_slice(),
            ParamKind::Tau => l.tau.as_slice(),
            ParamKind::Gamma => l.gamma.as_ref().and_then(|g| g.as_slice()),
            ParamKind::Beta => l.beta.as_ref().and_then(|g| g.as_slice()),
        }
    }

    pub fn get(&self, c: crate::network::ParamCoord) -> Option<F> {
        self.slice(c.layer, c.kind)?.get(c.index).copied()
    }

    pub fn global_norm(&self) -> F {
        let mut sq = F::zero();
        for l in &self.layers {
            let tensors = [Some(&l.tau), l.gamma.as_ref(), l.beta.as_ref()];
            sq += l.weight.iter().map(|&g| g * g).sum::<F>();
            for t in tensors.into_iter().flatten() {
                sq += t.iter().map(|&g| g * g).sum::<F>();
            }
        }
        sq.sqrt()
    }

    pub fn scale(&mut self, factor: F) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.tau *= factor;
            for g in [l.gamma.as_mut(), l.beta.as_mut()].into_iter().flatten() {
                *g *= factor;
            }
        }
    }
}

/// Gradients of [`super::batch_loss`] with respect to every parameter.
///
/// `targets` is time-major like the cache; the first `warmup_discard`
/// timesteps carry no loss.
pub fn backward<F: Real>(
    cache: &TrainingCache<F>,
    params: &NetworkParams<F>,
    spec: &NetworkSpec,
    targets: ArrayView2<'_, F>,
    warmup_discard: usize,
) -> Result<Gradients<F>> {
    if cache.mode != Mode::Train {
        return Err(Error::Config("backward needs a cache from a training-mode pass".into()));
    }
    params.check(spec)?;
    if cache.layers.len() != params.layers.len() {
        return Err(Error::shape("cache layers", params.layers.len(), cache.layers.len()));
    }
    let v_th = F::lit(spec.v_th as f64);
    let batch = cache.batch;
    let mut grads = Vec::with_capacity(params.layers.len());
    let mut upstream = loss_grad(cache.predictions(), targets, batch, warmup_discard)?;

    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let lc = &cache.layers[l];
        let tau: Vec<F> = layer.tau.iter().map(|&t| clamp_unit(t)).collect();
        let (g_current, g_tau) = if let Some(spikes) = &lc.spikes {
            let mut g_spikes = upstream;
            if let Some(mask) = &lc.dropout {
                g_spikes *= mask;
            }
            spiking_backward(&g_spikes, &lc.membrane, spikes, &tau, v_th, spec.reset_mode, batch)
        } else {
            output_backward(&upstream, &lc.membrane, &tau, batch)
        };
        check_finite(&g_current, l, batch)?;

        let (g_pre, g_gamma, g_beta) = match (&layer.norm, &lc.norm) {
            (Some(norm), Some(nc)) => {
                let (gz, gg, gb) =
                    crate::network::norm_backward(g_current.view(), nc.x_hat.view(), &nc.inv_std, &norm.gamma, v_th);
                (gz, Some(gg), Some(gb))
            }
            (None, None) => (g_current, None, None),
            _ => {
                return Err(Error::Config(format!(
                    "cache and parameters disagree on layer {l}'s norm"
                )))
            }
        };
        let g_weight = weight_grad(lc.input.view(), g_pre.view());
        upstream = if l > 0 {
            matmul_transposed(g_pre.view(), layer.weight.view())
        } else {
            Array2::zeros((0, 0))
        };
        grads.push(LayerGrad {
            weight: g_weight,
            tau: g_tau,
            gamma: g_gamma,
            beta: g_beta,
        });
    }
    grads.reverse();
    let grads = Gradients { layers: grads };
    for (l, g) in grads.layers.iter().enumerate() {
        let all = g
            .weight
            .iter()
            .chain(&g.tau)
            .chain(g.gamma.iter().flatten())
            .chain(g.beta.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("parameter gradient of layer {l}"),
            });
        }
    }
    Ok(grads)
}

fn check_finite<F: Real>(g: &Array2<F>, layer: usize, batch: usize) -> Result<()> {
    if let Some(r) = g.rows().into_iter().position(|row| row.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite {
            context: format!("membrane gradient of layer {layer} at timestep {}", r / batch),
        });
    }
    Ok(())
}

/// Returns `(dL/dI, dL/dtau)` for a LIF layer given `dL/ds` from the layer above.
fn spiking_backward<F: Real>(
    g_spikes: &Array2<F>,
    u: &Array2<F>,
    s: &Array2<F>,
    tau: &[F],
    v_th: F,
    reset: ResetMode,
    batch: usize,
) -> (Array2<F>, Array1<F>) {
    let (rows, width) = u.dim();
    let surrogate = Surrogate::default();
    let mut g_u = Array2::<F>::zeros((rows, width));
    let mut g_tau = Array1::<F>::zeros(width);
    for r in (0..rows).rev() {
        for j in 0..width {
            let next = if r + batch < rows {
                g_u[[r + batch, j]]
            } else {
                F::zero()
            };
            let (from_next_s, from_next_u) = match reset {
                ResetMode::SubtractThreshold => (-tau[j] * v_th * next, tau[j] * next),
                ResetMode::ResetToZero => (-tau[j] * u[[r, j]] * next, tau[j] * (F::one() - s[[r, j]]) * next),
            };
            let g_s = g_spikes[[r, j]] + from_next_s;
            let g = g_s * surrogate.grad(u[[r, j]], v_th) + from_next_u;
            g_u[[r, j]] = g;
            if r >= batch {
                let (up, sp) = (u[[r - batch, j]], s[[r - batch, j]]);
                let leak_input = match reset {
                    ResetMode::SubtractThreshold => up - sp * v_th,
                    ResetMode::ResetToZero => up * (F::one() - sp),
                };
                g_tau[j] += g * leak_input;
            }
        }
    }
    (g_u, g_tau)
}

fn output_backward<F: Real>(g_pred: &Array2<F>, u: &Array2<F>, tau: &[F], batch: usize) -> (Array2<F>, Array1<F>) {
    let (rows, width) = u.dim();
    let mut g_u = Array2::<F>::zeros((rows, width));
    let mut g_tau = Array1::<F>::zeros(width);
    for r in (0..rows).rev() {
        for j in 0..width {
            let next = if r + batch < rows {
                g_u[[r + batch, j]]
            } else {
                F::zero()
            };
            let g = g_pred[[r, j]] + tau[j] * next;
            g_u[[r, j]] = g;
            if r >= batch {
                g_tau[j] += g * u[[r - batch, j]];
            }
        }
    }
    (g_u, g_tau)
}
