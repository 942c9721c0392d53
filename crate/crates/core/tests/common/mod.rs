#![allow(dead_code)]

pub mod tape;

use ndarray::Array2;
use rand::Rng;
use snn_decoder::data::{split_train_val, synth_generate, Dataset, Standardizer, SynthConfig};
use snn_decoder::lif::ResetMode;
use snn_decoder::network::{NetworkParams, NetworkSpec, TauInit};
use snn_decoder::train::{make_windows, ValidationSet, WindowDataset};

/// `|a - b| / max(|a|, |b|)`, with two values below `floor` in magnitude
/// counted as equal.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m < floor {
        0.0
    } else {
        (a - b).abs() / m
    }
}

/// A small network with randomized norm parameters so that spikes, silent
/// neurons and surrogate-window neurons all occur.
pub fn random_case<R: Rng>(
    rng: &mut R,
    widths: &[usize],
    steps: usize,
    batch: usize,
    reset_mode: ResetMode,
) -> (NetworkSpec, NetworkParams<f64>, Array2<f64>, Array2<f64>) {
    let spec = NetworkSpec {
        window_len: steps,
        reset_mode,
        ..NetworkSpec::with_widths(widths)
    };
    let mut params = NetworkParams::<f64>::init(&spec, TauInit::Uniform, rng).unwrap();
    for layer in &mut params.layers {
        if let Some(n) = layer.norm.as_mut() {
            n.gamma.mapv_inplace(|_| rng.random_range(0.5..2.0));
            n.beta.mapv_inplace(|_| rng.random_range(-0.3..0.6));
        }
    }
    let rows = steps * batch;
    let x = Array2::from_shape_simple_fn((rows, spec.input_width()), || rng.random_range(-2.0..2.0));
    let y = Array2::from_shape_simple_fn((rows, spec.output_width()), || rng.random_range(-1.0..1.0));
    (spec, params, x, y)
}

/// A synthetic recording split 80/20 and standardized with training statistics.
pub struct SynthTask {
    pub raw_val: Dataset,
    pub standardizer: Standardizer,
    pub train_x: Array2<f32>,
    pub train_y: Array2<f32>,
    pub val: ValidationSet,
}

impl SynthTask {
    pub fn new(config: &SynthConfig) -> Self {
        let (data, _) = synth_generate(config).unwrap();
        let (train, val) = split_train_val(&data, 0.8).unwrap();
        let standardizer = Standardizer::fit(train.features.view(), train.velocities.view()).unwrap();
        Self {
            train_x: standardizer.apply_features(train.features.view()).unwrap(),
            train_y: standardizer.apply_velocities(train.velocities.view()).unwrap(),
            val: ValidationSet {
                features: standardizer.apply_features(val.features.view()).unwrap(),
                targets: standardizer.apply_velocities(val.velocities.view()).unwrap(),
            },
            raw_val: val,
            standardizer,
        }
    }

    pub fn windows(&self, window_len: usize) -> WindowDataset {
        make_windows(self.train_x.clone(), self.train_y.clone(), window_len, window_len - 1).unwrap()
    }
}

pub fn mean_r(pred: &Array2<f32>, truth: &Array2<f32>) -> f64 {
    snn_decoder::metrics::MetricReport::compute(pred.view(), truth.view())
        .unwrap()
        .mean_r
}
