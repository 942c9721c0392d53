//! Synthetic cosine-tuned population.
//!
//! A latent 2-D velocity follows a mean-reverting Gaussian walk smoothed by an
//! exponential filter. Each channel responds with
//! `softplus(b0 + g * <d, v / sd(v)>)` plus white Gaussian noise whose
//! standard deviation is `noise_std` times that channel's clean-signal spread.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta, Provenance};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_frames: usize,
    pub channels: usize,
    pub seed: u64,
    /// Observation noise relative to each channel's clean standard deviation.
    pub noise_std: f64,
    /// Time constant, in frames, of the exponential velocity filter.
    pub smoothness: f64,
    /// Lag-one autocorrelation of the driving walk.
    pub drive_persistence: f64,
    pub frame_ms: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_frames: 12000,
            channels: 96,
            seed: 0,
            noise_std: 10.0,
            smoothness: 10.0,
            drive_persistence: 0.95,
            frame_ms: 50.0,
        }
    }
}

const OUTPUTS: usize = 2;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn synth_generate(config: &SynthConfig) -> Result<(Dataset, DatasetMeta)> {
    if config.n_frames == 0 || config.channels == 0 {
        return Err(Error::Config(
            "synthetic data needs at least one frame and one channel".into(),
        ));
    }
    if !(config.smoothness >= 1.0) || !(0.0..1.0).contains(&config.drive_persistence) || !(config.noise_std >= 0.0) {
        return Err(Error::Config(
            "smoothness must be >= 1, drive_persistence in [0, 1), noise_std >= 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // tuning first, so the population is fixed by the seed independently of length
    let tuning: Vec<(f64, f64, [f64; 2])> = (0..config.channels)
        .map(|_| {
            let b0 = rng.random_range(-1.0..1.0);
            let gain = rng.random_range(0.5..2.0);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            (b0, gain, [angle.cos(), angle.sin()])
        })
        .collect();

    let rho = config.drive_persistence;
    let innovation = (1.0 - rho * rho).sqrt();
    let alpha = 1.0 / config.smoothness;
    let mut drive = [0.0f64; OUTPUTS];
    let mut v = [0.0f64; OUTPUTS];
    let mut velocities = Array2::<f64>::zeros((config.n_frames, OUTPUTS));
    for mut row in velocities.rows_mut() {
        for k in 0..OUTPUTS {
            let xi: f64 = StandardNormal.sample(&mut rng);
            drive[k] = rho * drive[k] + innovation * xi;
            v[k] += alpha * (drive[k] - v[k]);
            row[k] = v[k];
        }
    }

    let scale: Array1<f64> = velocities
        .std_axis(Axis(0), 0.0)
        .mapv(|s| if s > 0.0 { 1.0 / s } else { 1.0 });
    let mut clean = Array2::<f64>::zeros((config.n_frames, config.channels));
    for (vel, mut out) in velocities.rows().into_iter().zip(clean.rows_mut()) {
        for (c, &(b0, gain, d)) in out.iter_mut().zip(&tuning) {
            let proj = d[0] * vel[0] * scale[0] + d[1] * vel[1] * scale[1];
            *c = softplus(b0 + gain * proj);
        }
    }

    let spread = clean.std_axis(Axis(0), 0.0);
    let mut features = clean;
    if config.noise_std > 0.0 {
        for (mut col, &s) in features.columns_mut().into_iter().zip(&spread) {
            let noise = Normal::new(0.0, config.noise_std * s).expect("finite non-negative std");
            col.mapv_inplace(|x| x + noise.sample(&mut rng));
        }
    }

    let data = Dataset::new(
        features.mapv(|x| x as f32),
        velocities.mapv(|x| x as f32),
        config.frame_ms,
        Provenance::Synthetic,
    )?;
    let meta = data.meta();
    Ok((data, meta))
}
