//! Fully connected spiking decoder.
//!
//! Every layer computes `z = x W`, normalizes `z` with a threshold-scaled
//! batch norm and integrates the result into its membranes. All layers but the
//! last are LIF layers whose spikes feed the next layer; the last layer is a
//! bank of non-spiking integrators whose membrane voltages are the outputs.

mod forward;
mod linalg;
mod norm;

pub(crate) use forward::forward_linearized;
pub use forward::{
    forward_batch, forward_streaming, forward_unfolded, predict_sequence, reset_state, LayerCache, Mode, NetworkState,
    NormCache, TrainingCache,
};
pub(crate) use linalg::{matmul_transposed, weight_grad};
pub(crate) use norm::norm_backward;
pub use norm::{tdbn_apply, BatchStats, ThresholdNorm, NORM_EPS, NORM_MOMENTUM};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lif::ResetMode;
use crate::real::Real;

/// Topology and neuron hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSpec {
    /// Input width followed by every layer's width; the last entry is the
    /// number of non-spiking outputs.
    pub layer_widths: Vec<usize>,
    pub v_th: f32,
    /// Dropout probability on spikes leaving hidden layers (training only).
    pub dropout_p: f32,
    /// Frames per training sample.
    pub window_len: usize,
    pub reset_mode: ResetMode,
    /// Normalize the output integrators' input current as well.
    pub norm_output: bool,
    /// Apply dropout to the last hidden layer's spikes.
    pub dropout_into_output: bool,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            layer_widths: vec![96, 256, 256, 256, 2],
            v_th: 0.4,
            dropout_p: 0.2,
            window_len: 10,
            reset_mode: ResetMode::SubtractThreshold,
            norm_output: true,
            dropout_into_output: true,
        }
    }
}

impl NetworkSpec {
    pub fn with_widths(widths: &[usize]) -> Self {
        Self {
            layer_widths: widths.to_vec(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Config("need at least an input and an output width".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Config(format!("zero width in {:?}", self.layer_widths)));
        }
        if !(self.v_th > 0.0) {
            return Err(Error::Config(format!("v_th must be positive, got {}", self.v_th)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.window_len == 0 {
            return Err(Error::Config("window_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Number of weight layers.
    pub fn layer_count(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// Number of LIF layers (all weight layers except the output).
    pub fn spiking_layer_count(&self) -> usize {
        self.layer_count() - 1
    }

    /// Width of weight layer `l` (0-based).
    pub fn width(&self, layer: usize) -> usize {
        self.layer_widths[layer + 1]
    }

    /// Neurons in every weight layer, outputs included.
    pub fn neuron_count(&self) -> usize {
        self.layer_widths[1..].iter().sum()
    }

    pub fn has_norm(&self, layer: usize) -> bool {
        layer + 1 < self.layer_count() || self.norm_output
    }

    /// Whether the spikes of hidden layer `layer` pass through dropout in training.
    pub fn has_dropout(&self, layer: usize) -> bool {
        self.dropout_p > 0.0
            && layer < self.spiking_layer_count()
            && (layer + 1 < self.spiking_layer_count() || self.dropout_into_output)
    }
}

/// How decay factors are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum TauInit {
    /// Independent uniform draws on [0, 1] per neuron.
    Uniform,
    /// One shared constant.
    Fixed(f32),
}

/// Parameters of one weight layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<F> {
    /// `in x out`; row `i` holds the fan-out of input `i`.
    pub weight: Array2<F>,
    pub tau: Array1<F>,
    pub norm: Option<ThresholdNorm<F>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<F> {
    pub layers: Vec<Layer<F>>,
}

/// Which tensor of a layer a coordinate refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Tau,
    Gamma,
    Beta,
}

/// One scalar inside [`NetworkParams`]; weight indices are row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamCoord {
    pub layer: usize,
    pub kind: ParamKind,
    pub index: usize,
}

impl<F: Real> NetworkParams<F> {
    /// Weights are `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, norm scale 1, shift 0.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, tau_init: TauInit, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.layer_count());
        for l in 0..spec.layer_count() {
            let (fan_in, fan_out) = (spec.layer_widths[l], spec.layer_widths[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || F::lit(dist.sample(rng)));
            let tau = match tau_init {
                TauInit::Uniform => Array1::from_shape_simple_fn(fan_out, || F::lit(rng.random::<f64>())),
                TauInit::Fixed(t) => {
                    if !(0.0..=1.0).contains(&t) {
                        return Err(Error::Config(format!("fixed tau {t} outside [0, 1]")));
                    }
                    Array1::from_elem(fan_out, F::lit(t as f64))
                }
            };
            let norm = spec.has_norm(l).then(|| ThresholdNorm::new(fan_out));
            layers.push(Layer { weight, tau, norm });
        }
        Ok(Self { layers })
    }

    /// Checks tensor shapes against `spec` and the parameter invariants.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        spec.validate()?;
        if self.layers.len() != spec.layer_count() {
            return Err(Error::shape("layer count", spec.layer_count(), self.layers.len()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let expected = (spec.layer_widths[l], spec.layer_widths[l + 1]);
            if layer.weight.dim() != expected {
                return Err(Error::shape(
                    "weight matrix",
                    format!("{expected:?}"),
                    format!("{:?}", layer.weight.dim()),
                ));
            }
            if layer.tau.len() != expected.1 {
                return Err(Error::shape("decay factors", expected.1, layer.tau.len()));
            }
            if layer.tau.iter().any(|t| !(*t >= F::zero() && *t <= F::one())) {
                return Err(Error::Config(format!("layer {l} has decay factors outside [0, 1]")));
            }
            match (&layer.norm, spec.has_norm(l)) {
                (Some(n), true) => n.check(expected.1)?,
                (None, false) => {}
                (Some(_), false) => return Err(Error::Config(format!("layer {l} has an unexpected norm"))),
                (None, true) => return Err(Error::Config(format!("layer {l} is missing its norm"))),
            }
        }
        Ok(())
    }

    /// Replaces every decay factor by `min(1, max(0, tau))`.
    pub fn clamp_tau(&mut self) {
        for layer in &mut self.layers {
            layer.tau.mapv_inplace(clamp_unit);
        }
    }

    pub fn all_tau(&self) -> impl Iterator<Item = F> + '_ {
        self.layers.iter().flat_map(|l| l.tau.iter().copied())
    }

    pub fn slice(&self, layer: usize, kind: ParamKind) -> Option<&[F]> {
        let l = self.layers.get(layer)?;
        match kind {
            ParamKind::Weight => l.weight.as_slice(),
            ParamKind::Tau => l.tau.as_slice(),
            ParamKind::Gamma => l.norm.as_ref().and_then(|n| n.gamma.as_slice()),
            ParamKind::Beta => l.norm.as_ref().and_then(|n| n.beta.as_slice()),
        }
    }

    pub fn slice_mut(&mut self, layer: usize, kind: ParamKind) -> Option<&mut [F]> {
        let l = self.layers.get_mut(layer)?;
        match kind {
            ParamKind::Weight => l.weight.as_slice_mut(),
            ParamKind::Tau => l.tau.as_slice_mut(),
            ParamKind::Gamma => l.norm.as_mut().and_then(|n| n.gamma.as_slice_mut()),
            ParamKind::Beta => l.norm.as_mut().and_then(|n| n.beta.as_slice_mut()),
        }
    }

    pub fn get(&self, c: ParamCoord) -> Option<F> {
        self.slice(c.layer, c.kind)?.get(c.index).copied()
    }

    pub fn set(&mut self, c: ParamCoord, value: F) -> Option<()> {
        *self.slice_mut(c.layer, c.kind)?.get_mut(c.index)? = value;
        Some(())
    }

    /// Every trainable coordinate, in a fixed order.
    pub fn coords(&self) -> Vec<ParamCoord> {
        let mut out = Vec::new();
        for layer in 0..self.layers.len() {
            for kind in [ParamKind::Weight, ParamKind::Tau, ParamKind::Gamma, ParamKind::Beta] {
                if let Some(s) = self.slice(layer, kind) {
                    out.extend((0..s.len()).map(|index| ParamCoord { layer, kind, index }));
                }
            }
        }
        out
    }

    /// Folds a batch's statistics into every norm's running estimates.
    pub fn absorb_batch_stats(&mut self, cache: &TrainingCache<F>) {
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            if let (Some(norm), Some(nc)) = (layer.norm.as_mut(), lc.norm.as_ref()) {
                norm.update_running(&nc.stats);
            }
        }
    }

    pub fn cast<G: Real>(&self) -> NetworkParams<G> {
        let c = |a: &Array1<F>| a.mapv(|x| G::lit(x.to_f64_lossy()));
        NetworkParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.mapv(|x| G::lit(x.to_f64_lossy())),
                    tau: c(&l.tau),
                    norm: l.norm.as_ref().map(|n| ThresholdNorm {
                        gamma: c(&n.gamma),
                        beta: c(&n.beta),
                        running_mean: c(&n.running_mean),
                        running_var: c(&n.running_var),
                        eps: G::lit(n.eps.to_f64_lossy()),
                    }),
                })
                .collect(),
        }
    }
}

#[inline]
pub(crate) fn clamp_unit<F: Real>(x: F) -> F {
    x.max(F::zero()).min(F::one())
}
