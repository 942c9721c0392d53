//! Decoding metrics.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Product-moment correlation of two equally long sequences.
///
/// A constant sequence has no defined correlation and is reported as an
/// error rather than 0.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("pearson inputs", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientData("correlation needs at least two points".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 {
        return Err(Error::ZeroVariance("first sequence"));
    }
    if sbb == 0.0 {
        return Err(Error::ZeroVariance("second sequence"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation per output plus their mean, and MSE over all outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub r: Vec<f64>,
    /// Mean of the per-output correlations.
    pub mean_r: f64,
    pub mse: f64,
    pub frames: usize,
}

impl MetricReport {
    /// `predictions` and `truth` are `frames x outputs`.
    pub fn compute(predictions: ArrayView2<'_, f32>, truth: ArrayView2<'_, f32>) -> Result<Self> {
        if predictions.dim() != truth.dim() {
            return Err(Error::shape(
                "metric inputs",
                format!("{:?}", truth.dim()),
                format!("{:?}", predictions.dim()),
            ));
        }
        let col = |m: ArrayView2<'_, f32>, k: usize| m.column(k).iter().map(|&v| v as f64).collect::<Vec<_>>();
        let r = (0..truth.ncols())
            .map(|k| pearson(&col(predictions, k), &col(truth, k)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mean_r: r.iter().sum::<f64>() / r.len() as f64,
            r,
            mse: mse(predictions, truth),
            frames: truth.nrows(),
        })
    }
}

pub fn mse(predictions: ArrayView2<'_, f32>, truth: ArrayView2<'_, f32>) -> f64 {
    let n = predictions.len().max(1) as f64;
    predictions
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p as f64 - t as f64).powi(2))
        .sum::<f64>()
        / n
}
