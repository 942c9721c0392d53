use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::linalg::matmul;
use super::norm::BatchStats;
use super::{clamp_unit, NetworkParams, NetworkSpec};
use crate::error::{Error, Result};
use crate::lif::{fires, integrate, membrane, spike_value, LifLayerState, ResetMode, Surrogate};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Batch statistics in the norms, dropout active.
    Train,
    /// Running statistics, no dropout, no randomness.
    Eval,
}

/// Values the norm backward pass needs.
#[derive(Clone, Debug)]
pub struct NormCache<F> {
    pub x_hat: Array2<F>,
    pub inv_std: Array1<F>,
    pub stats: BatchStats<F>,
}

/// Everything one layer produced during an unfolded pass.
///
/// All matrices have one row per `(t, b)` pair at index `t * batch + b`.
#[derive(Clone, Debug)]
pub struct LayerCache<F> {
    /// Features for the first layer, dropped-out spikes of the previous layer otherwise.
    pub input: Array2<F>,
    pub pre_norm: Array2<F>,
    pub norm: Option<NormCache<F>>,
    pub current: Array2<F>,
    pub membrane: Array2<F>,
    /// `None` for the output integrators.
    pub spikes: Option<Array2<F>>,
    /// Scaled keep-mask applied to this layer's spikes; `None` when no dropout ran.
    pub dropout: Option<Array2<F>>,
}

/// Intermediate values of an unfolded forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct TrainingCache<F> {
    pub mode: Mode,
    pub batch: usize,
    pub steps: usize,
    pub layers: Vec<LayerCache<F>>,
}

impl<F: Real> TrainingCache<F> {
    #[inline]
    pub fn row(&self, t: usize, b: usize) -> usize {
        t * self.batch + b
    }

    /// Output membrane voltages, one row per `(t, b)`.
    pub fn predictions(&self) -> ArrayView2<'_, F> {
        self.layers.last().expect("at least one layer").membrane.view()
    }

    pub fn spikes(&self, layer: usize, t: usize, b: usize) -> Option<ArrayView1<'_, F>> {
        let r = self.row(t, b);
        self.layers.get(layer)?.spikes.as_ref().map(|s| s.row(r))
    }

    /// Number of `(timestep, spiking layer)` spike vectors held per sample.
    pub fn spike_vector_count(&self) -> usize {
        self.steps * self.layers.iter().filter(|l| l.spikes.is_some()).count()
    }

    /// Predictions of sample `b` as a `steps x outputs` matrix.
    pub fn sample_predictions(&self, b: usize) -> Array2<F> {
        let p = self.predictions();
        Array2::from_shape_fn((self.steps, p.ncols()), |(t, k)| p[[self.row(t, b), k]])
    }
}

/// Persistent neuron state for streaming inference.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState<F> {
    pub hidden: Vec<LifLayerState<F>>,
    pub output: Vec<F>,
}

/// All membranes and spike flags at zero.
pub fn reset_state<F: Real>(spec: &NetworkSpec) -> NetworkState<F> {
    NetworkState {
        hidden: (0..spec.spiking_layer_count())
            .map(|l| LifLayerState::zeros(spec.width(l)))
            .collect(),
        output: vec![F::zero(); spec.output_width()],
    }
}

impl<F: Real> NetworkState<F> {
    fn check(&self, spec: &NetworkSpec) -> Result<()> {
        if self.hidden.len() != spec.spiking_layer_count() {
            return Err(Error::shape(
                "network state layers",
                spec.spiking_layer_count(),
                self.hidden.len(),
            ));
        }
        for (l, h) in self.hidden.iter().enumerate() {
            if h.u.len() != spec.width(l) || h.spikes.len() != spec.width(l) {
                return Err(Error::shape("network state width", spec.width(l), h.u.len()));
            }
        }
        if self.output.len() != spec.output_width() {
            return Err(Error::shape(
                "network state outputs",
                spec.output_width(),
                self.output.len(),
            ));
        }
        Ok(())
    }

    /// Feeds one frame, updating this state in place, and returns the prediction.
    pub fn step(&mut self, params: &NetworkParams<F>, spec: &NetworkSpec, frame: &[F]) -> Result<Vec<F>> {
        self.check(spec)?;
        if frame.len() != spec.input_width() {
            return Err(Error::shape("input frame", spec.input_width(), frame.len()));
        }
        if frame.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "input frame".into(),
            });
        }
        let v_th = F::lit(spec.v_th as f64);
        let layers = prepare_eval(params, spec);
        let mut x = frame.to_vec();
        let mut z = Vec::new();
        for (l, layer) in layers.iter().enumerate() {
            z.clear();
            z.resize(layer.tau.len(), F::zero());
            accumulate_current(params.layers[l].weight.view(), &x, &mut z);
            layer.apply_affine(&mut z);
            if l < spec.spiking_layer_count() {
                let state = &mut self.hidden[l];
                for j in 0..z.len() {
                    let u = membrane(state.u[j], state.spikes[j], z[j], layer.tau[j], v_th, spec.reset_mode);
                    state.u[j] = u;
                    state.spikes[j] = spike_value(fires(u, v_th));
                }
                x.clone_from(&state.spikes);
            } else {
                for j in 0..z.len() {
                    self.output[j] = integrate(self.output[j], z[j], layer.tau[j]);
                }
            }
        }
        Ok(self.output.clone())
    }
}

/// Single-frame inference; the given state is left untouched.
pub fn forward_streaming<F: Real>(
    params: &NetworkParams<F>,
    spec: &NetworkSpec,
    frame: &[F],
    state: &NetworkState<F>,
) -> Result<(Vec<F>, NetworkState<F>)> {
    let mut next = state.clone();
    let prediction = next.step(params, spec, frame)?;
    Ok((prediction, next))
}

/// Streams a whole `frames x inputs` sequence from the reset state.
pub fn predict_sequence<F: Real>(
    params: &NetworkParams<F>,
    spec: &NetworkSpec,
    features: ArrayView2<'_, F>,
) -> Result<Array2<F>> {
    let mut state = reset_state(spec);
    let mut out = Array2::zeros((features.nrows(), spec.output_width()));
    for (frame, mut row) in features.rows().into_iter().zip(out.rows_mut()) {
        let frame = frame.to_vec();
        let p = state.step(params, spec, &frame)?;
        row.assign(&ArrayView1::from(&p[..]));
    }
    Ok(out)
}

/// Runs one `window_len x inputs` window through the unfolded network.
pub fn forward_unfolded<F: Real>(
    params: &NetworkParams<F>,
    spec: &NetworkSpec,
    window: ArrayView2<'_, F>,
    mode: Mode,
    seed: u64,
) -> Result<(Array2<F>, TrainingCache<F>)> {
    if window.nrows() != spec.window_len {
        return Err(Error::shape("window rows", spec.window_len, window.nrows()));
    }
    let cache = forward_batch(params, spec, window, 1, mode, seed)?;
    Ok((cache.predictions().to_owned(), cache))
}

/// Runs a batch through the unfolded network.
///
/// `inputs` holds `steps * batch` rows in time-major order (row `t * batch + b`).
/// Dropout masks are drawn from a ChaCha stream seeded with `seed`.
pub fn forward_batch<F: Real>(
    params: &NetworkParams<F>,
    spec: &NetworkSpec,
    inputs: ArrayView2<'_, F>,
    batch: usize,
    mode: Mode,
    seed: u64,
) -> Result<TrainingCache<F>> {
    run(params, spec, inputs, batch, mode, Masks::Random(seed), None)
}

/// Train-mode pass that reuses `reference`'s dropout masks and replaces each
/// spike by its first-order expansion around the recorded membrane potential.
pub(crate) fn forward_linearized<F: Real>(
    params: &NetworkParams<F>,
    spec: &NetworkSpec,
    inputs: ArrayView2<'_, F>,
    reference: &TrainingCache<F>,
) -> Result<TrainingCache<F>> {
    run(
        params,
        spec,
        inputs,
        reference.batch,
        Mode::Train,
        Masks::From(reference),
        Some(reference),
    )
}

enum Masks<'a, F> {
    Random(u64),
    From(&'a TrainingCache<F>),
}

fn run<F: Real>(
    params: &NetworkParams<F>,
    spec: &NetworkSpec,
    inputs: ArrayView2<'_, F>,
    batch: usize,
    mode: Mode,
    masks: Masks<'_, F>,
    linearize: Option<&TrainingCache<F>>,
) -> Result<TrainingCache<F>> {
    params.check(spec)?;
    if inputs.ncols() != spec.input_width() {
        return Err(Error::shape("input features", spec.input_width(), inputs.ncols()));
    }
    if batch == 0 || inputs.nrows() == 0 || !inputs.nrows().is_multiple_of(batch) {
        return Err(Error::shape(
            "input rows",
            format!("a positive multiple of batch size {batch}"),
            inputs.nrows(),
        ));
    }
    if let Some(r) = inputs.rows().into_iter().position(|r| r.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite {
            context: format!("input features at timestep {}, sample {}", r / batch, r % batch),
        });
    }
    let steps = inputs.nrows() / batch;
    let v_th = F::lit(spec.v_th as f64);
    let keep = F::lit(1.0 / (1.0 - spec.dropout_p as f64));
    let mut rng = match masks {
        Masks::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        Masks::From(_) => None,
    };
    let eval_layers = (mode == Mode::Eval).then(|| prepare_eval(params, spec));

    let mut layers = Vec::with_capacity(spec.layer_count());
    let mut x = inputs.to_owned();
    for (l, layer) in params.layers.iter().enumerate() {
        let tau: Vec<F> = layer.tau.iter().map(|&t| clamp_unit(t)).collect();
        let (pre_norm, current, norm_cache) = match mode {
            Mode::Train => {
                let z = matmul(x.view(), layer.weight.view());
                match &layer.norm {
                    Some(norm) => {
                        let (y, x_hat, stats) = norm.forward_train(z.view(), v_th)?;
                        let inv_std = stats.var.mapv(|v| F::one() / (v + norm.eps).sqrt());
                        (z, y, Some(NormCache { x_hat, inv_std, stats }))
                    }
                    None => (z.clone(), z, None),
                }
            }
            Mode::Eval => {
                let prepared = &eval_layers.as_ref().expect("prepared for eval")[l];
                let mut z = Array2::zeros((x.nrows(), layer.weight.ncols()));
                for (xr, mut zr) in x.rows().into_iter().zip(z.rows_mut()) {
                    let xs = xr.to_vec();
                    accumulate_current(layer.weight.view(), &xs, zr.as_slice_mut().expect("standard layout"));
                }
                let mut y = z.clone();
                for mut row in y.rows_mut() {
                    prepared.apply_affine(row.as_slice_mut().expect("standard layout"));
                }
                (z, y, None)
            }
        };

        if l < spec.spiking_layer_count() {
            let reference = linearize.map(|c| {
                let rl = &c.layers[l];
                (&rl.membrane, rl.spikes.as_ref().expect("spiking layer"))
            });
            let (u, s) = integrate_spiking(&current, &tau, v_th, spec.reset_mode, batch, reference);
            let mask = match (mode, &masks) {
                (Mode::Train, Masks::Random(_)) if spec.has_dropout(l) => {
                    let rng = rng.as_mut().expect("seeded");
                    let q = 1.0 - spec.dropout_p as f64;
                    Some(Array2::from_shape_simple_fn(s.raw_dim(), || {
                        if rng.random_bool(q) {
                            keep
                        } else {
                            F::zero()
                        }
                    }))
                }
                (Mode::Train, Masks::From(reference)) => reference.layers[l].dropout.clone(),
                _ => None,
            };
            let next = match &mask {
                Some(m) => &s * m,
                None => s.clone(),
            };
            layers.push(LayerCache {
                input: std::mem::replace(&mut x, next),
                pre_norm,
                norm: norm_cache,
                current,
                membrane: u,
                spikes: Some(s),
                dropout: mask,
            });
        } else {
            let u = integrate_output(&current, &tau, batch);
            layers.push(LayerCache {
                input: std::mem::take(&mut x),
                pre_norm,
                norm: norm_cache,
                current,
                membrane: u,
                spikes: None,
                dropout: None,
            });
        }
    }
    Ok(TrainingCache {
        mode,
        batch,
        steps,
        layers,
    })
}

fn integrate_spiking<F: Real>(
    current: &Array2<F>,
    tau: &[F],
    v_th: F,
    reset: ResetMode,
    batch: usize,
    reference: Option<(&Array2<F>, &Array2<F>)>,
) -> (Array2<F>, Array2<F>) {
    let (rows, width) = current.dim();
    let surrogate = Surrogate::default();
    let mut u = Array2::zeros((rows, width));
    let mut s = Array2::zeros((rows, width));
    for r in 0..rows {
        for j in 0..width {
            let (u_prev, s_prev) = if r >= batch {
                (u[[r - batch, j]], s[[r - batch, j]])
            } else {
                (F::zero(), F::zero())
            };
            let un = membrane(u_prev, s_prev, current[[r, j]], tau[j], v_th, reset);
            u[[r, j]] = un;
            s[[r, j]] = match reference {
                None => spike_value(fires(un, v_th)),
                Some((ru, rs)) => rs[[r, j]] + surrogate.grad(ru[[r, j]], v_th) * (un - ru[[r, j]]),
            };
        }
    }
    (u, s)
}

fn integrate_output<F: Real>(current: &Array2<F>, tau: &[F], batch: usize) -> Array2<F> {
    let (rows, width) = current.dim();
    let mut u = Array2::zeros((rows, width));
    for r in 0..rows {
        for j in 0..width {
            let prev = if r >= batch { u[[r - batch, j]] } else { F::zero() };
            u[[r, j]] = integrate(prev, current[[r, j]], tau[j]);
        }
    }
    u
}

/// `out += Σ_i x_i · W[i, :]`, skipping silent inputs.
///
/// Binary inputs reduce to adding the weight rows of the active inputs.
#[inline]
fn accumulate_current<F: Real>(weight: ArrayView2<'_, F>, x: &[F], out: &mut [F]) {
    for (i, &xi) in x.iter().enumerate() {
        if xi == F::zero() {
            continue;
        }
        let row = weight.row(i);
        if xi == F::one() {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w;
            }
        } else {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }
}

/// Per-layer constants for inference: clamped decay factors and folded norm.
struct EvalLayer<F> {
    tau: Vec<F>,
    affine: Option<(Array1<F>, Array1<F>)>,
}

impl<F: Real> EvalLayer<F> {
    #[inline]
    fn apply_affine(&self, z: &mut [F]) {
        if let Some((scale, shift)) = &self.affine {
            for ((v, &a), &b) in z.iter_mut().zip(scale).zip(shift) {
                *v = *v * a + b;
            }
        }
    }
}

fn prepare_eval<F: Real>(params: &NetworkParams<F>, spec: &NetworkSpec) -> Vec<EvalLayer<F>> {
    let v_th = F::lit(spec.v_th as f64);
    params
        .layers
        .iter()
        .map(|l| EvalLayer {
            tau: l.tau.iter().map(|&t| clamp_unit(t)).collect(),
            affine: l.norm.as_ref().map(|n| n.folded(v_th)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::TauInit;
    use ndarray::Array2;

    fn small() -> (NetworkSpec, NetworkParams<f32>) {
        let spec = NetworkSpec {
            window_len: 6,
            ..NetworkSpec::with_widths(&[5, 8, 7, 6, 2])
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = NetworkParams::init(&spec, TauInit::Uniform, &mut rng).unwrap();
        (spec, params)
    }

    fn window(spec: &NetworkSpec, seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((spec.window_len, spec.input_width()), || rng.random_range(-2.0..2.0))
    }

    #[test]
    fn zero_window_gives_zero_predictions() {
        let (spec, params) = small();
        let w = Array2::zeros((spec.window_len, 5));
        for mode in [Mode::Train, Mode::Eval] {
            let (pred, _) = forward_unfolded(&params, &spec, w.view(), mode, 3).unwrap();
            assert!(pred.iter().all(|&p| p == 0.0), "{mode:?}");
        }
    }

    #[test]
    fn eval_is_deterministic_and_train_masks_follow_seed() {
        let (spec, params) = small();
        let w = window(&spec, 2);
        let (a, _) = forward_unfolded(&params, &spec, w.view(), Mode::Eval, 1).unwrap();
        let (b, _) = forward_unfolded(&params, &spec, w.view(), Mode::Eval, 99).unwrap();
        assert_eq!(a, b);
        let (_, c1) = forward_unfolded(&params, &spec, w.view(), Mode::Train, 5).unwrap();
        let (_, c2) = forward_unfolded(&params, &spec, w.view(), Mode::Train, 5).unwrap();
        assert_eq!(c1.layers[0].dropout, c2.layers[0].dropout);
        assert!(c1.layers[0].dropout.is_some());
    }

    #[test]
    fn dropout_masks_change_every_timestep() {
        let (spec, params) = small();
        let spec = NetworkSpec {
            layer_widths: vec![5, 64, 64, 64, 2],
            ..spec
        };
        let params = NetworkParams::init(&spec, TauInit::Uniform, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_or(params);
        let w = window(&spec, 4);
        let (_, cache) = forward_unfolded(&params, &spec, w.view(), Mode::Train, 8).unwrap();
        let mask = cache.layers[1].dropout.as_ref().unwrap();
        for t in 1..spec.window_len {
            assert_ne!(mask.row(t), mask.row(t - 1));
        }
        let scaled = 1.0 / (1.0 - spec.dropout_p);
        assert!(mask.iter().all(|&m| m == 0.0 || m == scaled));
    }

    #[test]
    fn cache_holds_every_timestep_and_layer() {
        let spec = NetworkSpec::default();
        let params = NetworkParams::<f32>::init(&spec, TauInit::Uniform, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let w = window(&spec, 1);
        let (pred, cache) = forward_unfolded(&params, &spec, w.view(), Mode::Train, 0).unwrap();
        assert_eq!(pred.dim(), (10, 2));
        assert_eq!(cache.spike_vector_count(), 30);
        for t in 0..10 {
            for l in 0..3 {
                let s = cache.spikes(l, t, 0).unwrap();
                assert_eq!(s.len(), 256);
                assert!(s.iter().all(|&x| x == 0.0 || x == 1.0));
            }
        }
    }

    #[test]
    fn hidden_currents_are_sums_of_selected_weight_rows() {
        let (spec, params) = small();
        let w = window(&spec, 9);
        let (_, cache) = forward_unfolded(&params, &spec, w.view(), Mode::Eval, 0).unwrap();
        for l in 1..spec.layer_count() {
            let lc = &cache.layers[l];
            for r in 0..spec.window_len {
                let mut expected = vec![0.0f32; spec.width(l)];
                for (i, &s) in lc.input.row(r).iter().enumerate() {
                    assert!(s == 0.0 || s == 1.0);
                    if s == 1.0 {
                        for (e, &wv) in expected.iter_mut().zip(params.layers[l].weight.row(i)) {
                            *e += wv;
                        }
                    }
                }
                assert_eq!(lc.pre_norm.row(r).to_vec(), expected);
            }
        }
    }

    #[test]
    fn streaming_matches_unfolded_eval_bitwise() {
        let (spec, mut params) = small();
        // move running stats off their defaults
        for l in &mut params.layers {
            if let Some(n) = &mut l.norm {
                n.running_mean.mapv_inplace(|_| 0.3);
                n.running_var.mapv_inplace(|_| 0.5);
            }
        }
        let w = window(&spec, 21);
        let (pred, _) = forward_unfolded(&params, &spec, w.view(), Mode::Eval, 0).unwrap();
        let mut state = reset_state(&spec);
        for t in 0..spec.window_len {
            let frame = w.row(t).to_vec();
            let (p, next) = forward_streaming(&params, &spec, &frame, &state).unwrap();
            assert_eq!(p, pred.row(t).to_vec());
            state = next;
        }
    }

    #[test]
    fn streaming_leaves_caller_state_alone() {
        let (spec, params) = small();
        let state = reset_state::<f32>(&spec);
        let copy = state.clone();
        let frame = vec![1.0f32; 5];
        forward_streaming(&params, &spec, &frame, &state).unwrap();
        assert_eq!(state, copy);
        assert_eq!(reset_state::<f32>(&spec), reset_state::<f32>(&spec));
        let (p, _) = forward_streaming(&params, &spec, &[0.0; 5], &state).unwrap();
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let (spec, params) = small();
        let w = Array2::zeros((spec.window_len + 1, 5));
        assert!(forward_unfolded(&params, &spec, w.view(), Mode::Eval, 0).is_err());
        let mut w = Array2::zeros((spec.window_len, 5));
        w[[2, 1]] = f32::NAN;
        assert!(matches!(
            forward_unfolded(&params, &spec, w.view(), Mode::Eval, 0),
            Err(Error::NonFinite { .. })
        ));
        let state = reset_state::<f32>(&spec);
        assert!(forward_streaming(&params, &spec, &[0.0; 4], &state).is_err());
    }
}
