use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column affine map to zero mean and unit sample standard deviation,
/// fit on the training split only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub velocity_mean: Vec<f64>,
    pub velocity_std: Vec<f64>,
    /// Feature channels with zero spread; their std is forced to 1.
    pub degenerate_features: Vec<usize>,
    pub degenerate_velocities: Vec<usize>,
}

fn column_stats(x: ArrayView2<'_, f32>) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let x = x.mapv(|v| v as f64);
    let mean = x.mean_axis(Axis(0)).expect("at least one row");
    let std = x.std_axis(Axis(0), 1.0);
    let mut degenerate = Vec::new();
    let std = std
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            if s > 0.0 && s.is_finite() {
                s
            } else {
                degenerate.push(j);
                1.0
            }
        })
        .collect();
    (mean.to_vec(), std, degenerate)
}

fn forward(x: ArrayView2<'_, f32>, mean: &[f64], std: &[f64]) -> Array2<f32> {
    let mut out = x.to_owned();
    for (mut col, (&m, &s)) in out.columns_mut().into_iter().zip(mean.iter().zip(std)) {
        col.mapv_inplace(|v| ((v as f64 - m) / s) as f32);
    }
    out
}

fn inverse(x: ArrayView2<'_, f32>, mean: &[f64], std: &[f64]) -> Array2<f32> {
    let mut out = x.to_owned();
    for (mut col, (&m, &s)) in out.columns_mut().into_iter().zip(mean.iter().zip(std)) {
        col.mapv_inplace(|v| (v as f64 * s + m) as f32);
    }
    out
}

impl Standardizer {
    pub fn fit(features: ArrayView2<'_, f32>, velocities: ArrayView2<'_, f32>) -> Result<Self> {
        if features.nrows() < 2 || velocities.nrows() != features.nrows() {
            return Err(Error::InsufficientData(
                "standardizer needs at least two aligned training frames".into(),
            ));
        }
        let (feature_mean, feature_std, degenerate_features) = column_stats(features);
        let (velocity_mean, velocity_std, degenerate_velocities) = column_stats(velocities);
        Ok(Self {
            feature_mean,
            feature_std,
            velocity_mean,
            velocity_std,
            degenerate_features,
            degenerate_velocities,
        })
    }

    pub fn check(&self, channels: usize, outputs: usize) -> Result<()> {
        if self.feature_mean.len() != channels || self.feature_std.len() != channels {
            return Err(Error::shape("standardizer channels", channels, self.feature_mean.len()));
        }
        if self.velocity_mean.len() != outputs || self.velocity_std.len() != outputs {
            return Err(Error::shape("standardizer outputs", outputs, self.velocity_mean.len()));
        }
        Ok(())
    }

    pub fn apply_features(&self, x: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        self.check(x.ncols(), self.velocity_mean.len())?;
        Ok(forward(x, &self.feature_mean, &self.feature_std))
    }

    pub fn apply_velocities(&self, v: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        self.check(self.feature_mean.len(), v.ncols())?;
        Ok(forward(v, &self.velocity_mean, &self.velocity_std))
    }

    /// Maps standardized velocities back to original units.
    pub fn invert_velocities(&self, v: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        self.check(self.feature_mean.len(), v.ncols())?;
        Ok(inverse(v, &self.velocity_mean, &self.velocity_std))
    }
}
