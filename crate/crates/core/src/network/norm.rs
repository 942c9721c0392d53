//! Threshold-scaled batch normalization.
//!
//! Statistics are taken per channel over the joint batch x time population,
//! and the normalized value is scaled by the firing threshold:
//!
//! ```text
//! y = v_th * gamma * (x - mean) / sqrt(var + eps) + beta
//! ```

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};

use super::forward::Mode;
use crate::error::{Error, Result};
use crate::real::Real;

pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub eps: F,
}

/// Per-channel statistics of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<F> {
    pub mean: Array1<F>,
    /// Biased variance, as used for normalization.
    pub var: Array1<F>,
    pub population: usize,
}

impl<F: Real> ThresholdNorm<F> {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            eps: F::lit(NORM_EPS),
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    pub(crate) fn check(&self, width: usize) -> Result<()> {
        for (name, a) in [
            ("norm scale", &self.gamma),
            ("norm shift", &self.beta),
            ("norm running mean", &self.running_mean),
            ("norm running variance", &self.running_var),
        ] {
            if a.len() != width {
                return Err(Error::shape(name, width, a.len()));
            }
        }
        if self.running_var.iter().any(|v| !(*v >= F::zero())) {
            return Err(Error::Config("negative running variance".into()));
        }
        Ok(())
    }

    /// Normalizes rows of `z` with statistics of `z` itself.
    pub(crate) fn forward_train(&self, z: ArrayView2<'_, F>, v_th: F) -> Result<(Array2<F>, Array2<F>, BatchStats<F>)> {
        let n = z.nrows();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "batch normalization needs a batch x time population above 1, got {n}"
            )));
        }
        let nf = F::lit(n as f64);
        let mean = z.sum_axis(Axis(0)) / nf;
        let mut var = Array1::zeros(z.ncols());
        for row in z.rows() {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = x - m;
                *v += d * d;
            }
        }
        var /= nf;
        let inv_std = var.mapv(|v| F::one() / (v + self.eps).sqrt());
        let scale = &self.gamma * v_th;
        let mut x_hat = z.to_owned();
        let mut y = Array2::zeros(z.raw_dim());
        for (mut xh, mut yr) in x_hat.rows_mut().into_iter().zip(y.rows_mut()) {
            for c in 0..xh.len() {
                let h = (xh[c] - mean[c]) * inv_std[c];
                xh[c] = h;
                yr[c] = scale[c] * h + self.beta[c];
            }
        }
        Ok((
            y,
            x_hat,
            BatchStats {
                mean,
                var,
                population: n,
            },
        ))
    }

    /// Per-channel `(scale, shift)` so that inference is `y = z * scale + shift`.
    pub fn folded(&self, v_th: F) -> (Array1<F>, Array1<F>) {
        let scale: Array1<F> = self
            .gamma
            .iter()
            .zip(&self.running_var)
            .map(|(&g, &v)| v_th * g / (v + self.eps).sqrt())
            .collect();
        let shift = self
            .beta
            .iter()
            .zip(&scale)
            .zip(&self.running_mean)
            .map(|((&b, &s), &m)| b - s * m)
            .collect();
        (scale, shift)
    }

    /// Exponential moving average update; the variance estimate is unbiased.
    pub fn update_running(&mut self, stats: &BatchStats<F>) {
        let m = F::lit(NORM_MOMENTUM);
        let keep = F::one() - m;
        let n = stats.population as f64;
        let unbias = F::lit(n / (n - 1.0));
        for c in 0..self.width() {
            self.running_mean[c] = keep * self.running_mean[c] + m * stats.mean[c];
            self.running_var[c] = keep * self.running_var[c] + m * stats.var[c] * unbias;
        }
    }
}

/// Gradients of the norm's inputs and affine parameters given `dL/dy`.
pub(crate) fn norm_backward<F: Real>(
    grad_out: ArrayView2<'_, F>,
    x_hat: ArrayView2<'_, F>,
    inv_std: &Array1<F>,
    gamma: &Array1<F>,
    v_th: F,
) -> (Array2<F>, Array1<F>, Array1<F>) {
    let width = grad_out.ncols();
    let n = F::lit(grad_out.nrows() as f64);
    let mut g_beta = Array1::zeros(width);
    let mut g_gamma = Array1::zeros(width);
    let mut sum_gxh = Array1::<F>::zeros(width);
    let mut sum_gxh_xh = Array1::<F>::zeros(width);
    for (gy, xh) in grad_out.rows().into_iter().zip(x_hat.rows()) {
        for c in 0..width {
            g_beta[c] += gy[c];
            g_gamma[c] += gy[c] * xh[c];
            let gxh = gy[c] * v_th * gamma[c];
            sum_gxh[c] += gxh;
            sum_gxh_xh[c] += gxh * xh[c];
        }
    }
    g_gamma *= v_th;
    let mut gz = Array2::zeros(grad_out.raw_dim());
    for ((gy, xh), mut out) in grad_out.rows().into_iter().zip(x_hat.rows()).zip(gz.rows_mut()) {
        for c in 0..width {
            let gxh = gy[c] * v_th * gamma[c];
            out[c] = inv_std[c] / n * (n * gxh - sum_gxh[c] - xh[c] * sum_gxh_xh[c]);
        }
    }
    (gz, g_gamma, g_beta)
}

/// Normalizes a `batch x time x width` tensor.
///
/// In [`Mode::Train`] the statistics come from the tensor and the running
/// estimates are updated; in [`Mode::Eval`] the running estimates are used.
pub fn tdbn_apply<F: Real>(
    currents: ArrayView3<'_, F>,
    norm: &mut ThresholdNorm<F>,
    v_th: F,
    mode: Mode,
) -> Result<Array3<F>> {
    let (b, t, w) = currents.dim();
    if w != norm.width() {
        return Err(Error::shape("normalized currents", norm.width(), w));
    }
    let flat = currents
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * t, w))
        .expect("contiguous");
    let out = match mode {
        Mode::Train => {
            let (y, _, stats) = norm.forward_train(flat.view(), v_th)?;
            norm.update_running(&stats);
            y
        }
        Mode::Eval => {
            let (scale, shift) = norm.folded(v_th);
            let mut y = flat;
            for mut row in y.rows_mut() {
                for c in 0..w {
                    row[c] = row[c] * scale[c] + shift[c];
                }
            }
            y
        }
    };
    Ok(out.into_shape_with_order((b, t, w)).expect("same size"))
}
