//! Linear Kalman-filter velocity decoder.
//!
//! State `x = [v1, v2, 1]`, dynamics `x' = A x + w`, observations
//! `y = C x + q`. Everything is identified by least squares on the training
//! split and runs in `f64`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

const STATE: usize = 3;
const VELOCITIES: usize = 2;
/// Relative jitter added to the observation noise so the innovation
/// covariance stays invertible when residuals vanish.
const OBSERVATION_FLOOR: f64 = 1e-6;
/// Conditioning limit of the normal equations before ridge kicks in.
const MAX_CONDITION: f64 = 1e12;
/// Smallest accepted ratio of squared Cholesky pivots in the innovation solve.
const MIN_PIVOT_RATIO: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct KfModel {
    pub a: Matrix3<f64>,
    pub w: Matrix3<f64>,
    /// `channels x 3`
    pub c: DMatrix<f64>,
    /// `channels x channels`
    pub q: DMatrix<f64>,
    /// Ridge strength used for the least-squares fits; 0 when none was needed.
    pub regularizer: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KfState {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

impl Default for KfState {
    /// Zero velocity with unit variance; the bias component is exact.
    fn default() -> Self {
        Self {
            mean: Vector3::new(0.0, 0.0, 1.0),
            cov: Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)),
        }
    }
}

fn to_dmatrix(x: ArrayView2<'_, f32>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[[i, j]] as f64)
}

fn augmented(v: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(v.nrows(), STATE, |i, j| if j < VELOCITIES { v[(i, j)] } else { 1.0 })
}

/// Least-squares `B` minimizing `|X B - Y|`, returned with the ridge used.
fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let gram = x.transpose() * x;
    let rhs = x.transpose() * y;
    let scale = gram.diagonal().max().max(f64::MIN_POSITIVE);
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let mut ridge = if lo > hi / MAX_CONDITION { 0.0 } else { scale * 1e-10 };
    loop {
        let mut g = gram.clone();
        for i in 0..g.nrows() {
            g[(i, i)] += ridge;
        }
        if let Some(ch) = g.cholesky() {
            return (ch.solve(&rhs), ridge);
        }
        ridge = if ridge == 0.0 { scale * 1e-10 } else { ridge * 10.0 };
    }
}

fn covariance(residual: &DMatrix<f64>) -> DMatrix<f64> {
    let n = residual.nrows().max(1) as f64;
    let c = residual.transpose() * residual / n;
    (&c + c.transpose()) * 0.5
}

/// Identifies `A, W, C, Q` from standardized `features` (`frames x channels`)
/// and `velocities` (`frames x 2`).
pub fn kf_fit(features: ArrayView2<'_, f32>, velocities: ArrayView2<'_, f32>) -> Result<KfModel> {
    let n = features.nrows();
    if n < 2 || velocities.nrows() != n {
        return Err(Error::InsufficientData(
            "Kalman fit needs at least two aligned frames".into(),
        ));
    }
    if velocities.ncols() != VELOCITIES {
        return Err(Error::shape("Kalman velocity columns", VELOCITIES, velocities.ncols()));
    }
    let y = to_dmatrix(features);
    let x = augmented(&to_dmatrix(velocities));

    let prev = x.rows(0, n - 1).into_owned();
    let next = x.rows(1, n - 1).columns(0, VELOCITIES).into_owned();
    let (a_t, ridge_a) = least_squares(&prev, &next);
    let mut a = Matrix3::zeros();
    a.fixed_view_mut::<2, 3>(0, 0).copy_from(&a_t.transpose());
    a[(2, 2)] = 1.0;
    let w2 = covariance(&(&next - &prev * &a_t));
    let mut w = Matrix3::zeros();
    w.fixed_view_mut::<2, 2>(0, 0).copy_from(&w2);

    let (c_t, ridge_c) = least_squares(&x, &y);
    let mut q = covariance(&(&y - &x * &c_t));
    let floor = OBSERVATION_FLOOR
        * (y.column_iter().map(|c| c.variance()).sum::<f64>() / y.ncols() as f64).max(f64::MIN_POSITIVE);
    for i in 0..q.nrows() {
        q[(i, i)] += floor;
    }
    Ok(KfModel {
        a,
        w,
        c: c_t.transpose(),
        q,
        regularizer: ridge_a.max(ridge_c),
    })
}

impl KfModel {
    pub fn channels(&self) -> usize {
        self.c.nrows()
    }

    pub fn check(&self) -> Result<()> {
        let ch = self.channels();
        if self.c.ncols() != STATE || self.q.shape() != (ch, ch) {
            return Err(Error::shape(
                "Kalman model",
                format!("C {ch}x3, Q {ch}x{ch}"),
                format!("C {:?}, Q {:?}", self.c.shape(), self.q.shape()),
            ));
        }
        Ok(())
    }
}

fn condition(s: &DMatrix<f64>) -> f64 {
    let eig = s.clone().symmetric_eigenvalues();
    let lo = eig.iter().fold(f64::INFINITY, |m, &e| m.min(e.abs()));
    eig.iter().fold(0.0f64, |m, &e| m.max(e.abs())) / lo
}

/// One predict and Joseph-form update cycle. Returns the posterior velocity.
pub fn kf_step(model: &KfModel, state: &mut KfState, observation: &[f64]) -> Result<[f64; 2]> {
    if observation.len() != model.channels() {
        return Err(Error::shape("Kalman observation", model.channels(), observation.len()));
    }
    let mean = model.a * state.mean;
    let cov = model.a * state.cov * model.a.transpose() + model.w;

    let ch = &model.c;
    let pct = DMatrix::from_fn(STATE, ch.nrows(), |i, j| {
        (0..STATE).map(|k| cov[(i, k)] * ch[(j, k)]).sum()
    });
    let s = ch * &pct + &model.q;
    let s = (&s + s.transpose()) * 0.5;
    let singular = || Error::SingularInnovation {
        condition: condition(&s),
    };
    let chol = s.clone().cholesky().ok_or_else(singular)?;
    let pivots = chol.l_dirty().diagonal();
    if pivots.min().powi(2) < MIN_PIVOT_RATIO * pivots.max().powi(2) {
        return Err(singular());
    }
    // K = P C^T S^-1, solved as S K^T = C P
    let gain = chol.solve(&pct.transpose()).transpose();
    let predicted = ch * DVector::from_column_slice(mean.as_slice());
    let innovation = DVector::from_column_slice(observation) - predicted;
    let dx = &gain * innovation;
    let new_mean = mean + Vector3::new(dx[0], dx[1], dx[2]);

    let kc = &gain * ch;
    let ikc = Matrix3::identity() - Matrix3::from_fn(|i, j| kc[(i, j)]);
    let kqk = &gain * &model.q * gain.transpose();
    let joseph = ikc * cov * ikc.transpose() + Matrix3::from_fn(|i, j| kqk[(i, j)]);
    state.cov = (joseph + joseph.transpose()) * 0.5;
    state.mean = new_mean;
    if !state.mean.iter().chain(state.cov.iter()).all(|x| x.is_finite()) {
        return Err(Error::NonFinite {
            context: "Kalman posterior".into(),
        });
    }
    Ok([new_mean[0], new_mean[1]])
}

/// Filters a whole sequence from the default state; returns `frames x 2`.
pub fn kf_decode(model: &KfModel, features: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
    model.check()?;
    let mut state = KfState::default();
    let mut out = Array2::zeros((features.nrows(), VELOCITIES));
    let mut obs = vec![0.0; features.ncols()];
    for (row, mut dst) in features.rows().into_iter().zip(out.rows_mut()) {
        obs.iter_mut().zip(row).for_each(|(o, &x)| *o = x as f64);
        let v = kf_step(model, &mut state, &obs)?;
        dst[0] = v[0] as f32;
        dst[1] = v[1] as f32;
    }
    Ok(out)
}
