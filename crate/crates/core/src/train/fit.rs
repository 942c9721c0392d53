use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, AdamWConfig, AdamWState};
use super::backward::backward;
use super::loss::batch_loss;
use super::windows::WindowDataset;
use crate::error::{Error, Result};
use crate::lif::ResetMode;
use crate::metrics::{mse, pearson};
use crate::network::{forward_batch, predict_sequence, Mode, NetworkParams, NetworkSpec, TauInit};

/// Training hyperparameters. Missing fields in a config file take these defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Leading timesteps of every window excluded from the loss.
    pub warmup_discard: usize,
    pub epochs: usize,
    pub seed: u64,
    pub trainable_tau: bool,
    /// Shared decay factor used when `trainable_tau` is off.
    pub fixed_tau: f32,
    /// Global gradient-norm ceiling; off by default.
    pub grad_clip: Option<f64>,
    pub network: NetworkSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            weight_decay: 1e-2,
            batch_size: 128,
            warmup_discard: 2,
            epochs: 24,
            seed: 0,
            trainable_tau: true,
            fixed_tau: 0.5,
            grad_clip: None,
            network: NetworkSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn window_len(&self) -> usize {
        self.network.window_len
    }

    pub fn reset_mode(&self) -> ResetMode {
        self.network.reset_mode
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.warmup_discard >= self.window_len() {
            return Err(Error::Config(format!(
                "warmup_discard {} must be below the window length {}",
                self.warmup_discard,
                self.window_len()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "learning rate must be positive and weight decay non-negative".into(),
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            train_tau: self.trainable_tau,
            ..AdamWConfig::default()
        }
    }

    pub fn tau_init(&self) -> TauInit {
        if self.trainable_tau {
            TauInit::Uniform
        } else {
            TauInit::Fixed(self.fixed_tau)
        }
    }
}

/// A contiguous standardized sequence decoded by streaming from the reset state.
#[derive(Clone, Debug)]
pub struct ValidationSet {
    pub features: Array2<f32>,
    pub targets: Array2<f32>,
}

/// Streaming predictions on `val` and their loss and per-output correlations.
pub fn validate(
    params: &NetworkParams<f32>,
    spec: &NetworkSpec,
    val: &ValidationSet,
) -> Result<(Array2<f32>, f64, Option<Vec<f64>>)> {
    let pred = predict_sequence(params, spec, val.features.view())?;
    let loss = mse(pred.view(), val.targets.view());
    let r = (0..pred.ncols())
        .map(|k| {
            let p: Vec<f64> = pred.column(k).iter().map(|&v| v as f64).collect();
            let t: Vec<f64> = val.targets.column(k).iter().map(|&v| v as f64).collect();
            pearson(&p, &t)
        })
        .collect::<Result<Vec<_>>>()
        .ok();
    Ok((pred, loss, r))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub record: String,
    pub config: TrainConfig,
    pub samples: usize,
    pub batches_per_epoch: usize,
    pub weight_init: String,
    pub tau_init: TauInit,
    pub correlation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub record: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_r: Option<Vec<f64>>,
    pub val_r_mean: Option<f64>,
    /// Extremes of every decay factor observed after each optimizer step.
    pub tau_min: f64,
    pub tau_max: f64,
    pub wall_time_s: f64,
}

/// Structured training log; one JSON object per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub header: LogHeader,
    pub epochs: Vec<EpochRecord>,
}

impl LogHeader {
    pub fn new(config: &TrainConfig, train: &WindowDataset) -> Self {
        Self {
            record: "config".into(),
            config: config.clone(),
            samples: train.len(),
            batches_per_epoch: train.len().div_ceil(config.batch_size.max(1)),
            weight_init: "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))".into(),
            tau_init: config.tau_init(),
            correlation: "mean over outputs of per-output pearson r".into(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }
}

impl TrainLog {
    pub fn header_line(&self) -> String {
        self.header.to_line()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = self.header_line();
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&e.to_line());
            out.push('\n');
        }
        out
    }

    /// The log with wall-clock times zeroed; equal across reruns with the same seed.
    pub fn fingerprint(&self) -> String {
        let mut copy = self.clone();
        copy.epochs.iter_mut().for_each(|e| e.wall_time_s = 0.0);
        copy.to_jsonl()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

impl EpochRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }
}

pub struct TrainOutcome {
    pub params: NetworkParams<f32>,
    pub log: TrainLog,
}

/// Trains a fresh network; see [`fit_with`].
pub fn fit(train: &WindowDataset, val: Option<&ValidationSet>, config: &TrainConfig) -> Result<TrainOutcome> {
    fit_with(train, val, config, |_| Ok(()))
}

/// Trains a fresh network, calling `on_epoch` after every epoch.
///
/// Everything random (initialization, shuffling, dropout) is drawn from one
/// ChaCha stream seeded with `config.seed`.
pub fn fit_with(
    train: &WindowDataset,
    val: Option<&ValidationSet>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let spec = &config.network;
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    if train.window_len() != spec.window_len {
        return Err(Error::shape("training windows", spec.window_len, train.window_len()));
    }
    if train.input_width() != spec.input_width() || train.output_width() != spec.output_width() {
        return Err(Error::shape(
            "training data width",
            format!("{} -> {}", spec.input_width(), spec.output_width()),
            format!("{} -> {}", train.input_width(), train.output_width()),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = NetworkParams::<f32>::init(spec, config.tau_init(), &mut rng)?;
    let mut opt = AdamWState::new(&params);
    let opt_cfg = config.optimizer();
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut log = TrainLog {
        header: LogHeader::new(config, train),
        epochs: Vec::new(),
    };

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let (mut tau_min, mut tau_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = train.gather::<f32>(chunk);
            let dropout_seed = rng.next_u64();
            let cache = forward_batch(&params, spec, x.view(), chunk.len(), Mode::Train, dropout_seed)?;
            let loss = batch_loss(cache.predictions(), y.view(), chunk.len(), config.warmup_discard)? as f64;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            let mut grads = backward(&cache, &params, spec, y.view(), config.warmup_discard)?;
            if let Some(limit) = config.grad_clip {
                let norm = grads.global_norm() as f64;
                if norm > limit {
                    grads.scale((limit / norm) as f32);
                }
            }
            params.absorb_batch_stats(&cache);
            adamw_step(&mut params, &grads, &mut opt, &opt_cfg);
            for t in params.all_tau() {
                tau_min = tau_min.min(t as f64);
                tau_max = tau_max.max(t as f64);
            }
        }
        let (val_loss, val_r) = match val {
            Some(v) => {
                let (_, loss, r) = validate(&params, spec, v)?;
                (Some(loss), r)
            }
            None => (None, None),
        };
        let record = EpochRecord {
            record: "epoch".into(),
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            val_r_mean: val_r.as_ref().map(|r| r.iter().sum::<f64>() / r.len() as f64),
            val_r,
            tau_min,
            tau_max,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record)?;
        log.epochs.push(record);
    }
    Ok(TrainOutcome { params, log })
}

/// Appends `line` and a newline to `w`.
pub(crate) fn append_line(w: &mut impl Write, line: &str) -> std::io::Result<()> {
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()
}
