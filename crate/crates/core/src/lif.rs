//! Leaky integrate-and-fire kernels.
//!
//! ```text
//! u(t) = tau * (u(t-1) - s(t-1) * v_th) + I(t)      subtract-threshold reset
//! u(t) = tau * u(t-1) * (1 - s(t-1)) + I(t)         reset-to-zero
//! s(t) = 1 if u(t) >= v_th else 0
//! ds/du ~= 1 if |u - v_th| < 0.5 else 0              box surrogate
//! ```
//!
//! The scalar helpers [`membrane`] and [`fires`] are the single source of the
//! arithmetic; every forward path in the crate goes through them so that the
//! unfolded and streaming traversals agree bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// What happens to the membrane after a spike.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    /// Subtract the threshold, keeping any super-threshold residue.
    #[default]
    SubtractThreshold,
    /// Zero the membrane.
    ResetToZero,
}

/// Borrowed neuron parameters for one layer.
#[derive(Clone, Copy, Debug)]
pub struct LifParams<'a, F> {
    pub v_th: F,
    pub tau: &'a [F],
    pub reset_mode: ResetMode,
}

impl<'a, F: Real> LifParams<'a, F> {
    pub fn new(v_th: F, tau: &'a [F], reset_mode: ResetMode) -> Result<Self> {
        if !(v_th > F::zero()) {
            return Err(Error::Config(format!("threshold must be positive, got {v_th}")));
        }
        if let Some(t) = tau.iter().find(|t| !(**t >= F::zero() && **t <= F::one())) {
            return Err(Error::Config(format!("decay factor {t} outside [0, 1]")));
        }
        Ok(Self { v_th, tau, reset_mode })
    }

    pub fn width(&self) -> usize {
        self.tau.len()
    }
}

/// Membrane potentials and last-step spikes of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LifLayerState<F> {
    pub u: Vec<F>,
    /// 0/1 entries.
    pub spikes: Vec<F>,
}

impl<F: Real> LifLayerState<F> {
    pub fn zeros(width: usize) -> Self {
        Self {
            u: vec![F::zero(); width],
            spikes: vec![F::zero(); width],
        }
    }

    pub fn width(&self) -> usize {
        self.u.len()
    }

    /// In-place version of [`lif_step`]; returns the number of spikes emitted.
    pub fn advance(&mut self, current: &[F], params: &LifParams<'_, F>) -> Result<usize> {
        check_width(self.width(), current.len(), params.width())?;
        let mut count = 0;
        for i in 0..self.u.len() {
            let u = membrane(
                self.u[i],
                self.spikes[i],
                current[i],
                params.tau[i],
                params.v_th,
                params.reset_mode,
            );
            let s = fires(u, params.v_th);
            count += usize::from(s);
            self.u[i] = u;
            self.spikes[i] = spike_value(s);
        }
        Ok(count)
    }
}

fn check_width(state: usize, current: usize, tau: usize) -> Result<()> {
    if state != current {
        return Err(Error::shape("lif input current", state, current));
    }
    if state != tau {
        return Err(Error::shape("lif decay factors", state, tau));
    }
    Ok(())
}

/// One membrane update for a single neuron.
#[inline(always)]
pub fn membrane<F: Real>(u_prev: F, s_prev: F, current: F, tau: F, v_th: F, reset: ResetMode) -> F {
    match reset {
        ResetMode::SubtractThreshold => tau * (u_prev - s_prev * v_th) + current,
        ResetMode::ResetToZero => tau * u_prev * (F::one() - s_prev) + current,
    }
}

#[inline(always)]
pub fn fires<F: Real>(u: F, v_th: F) -> bool {
    u >= v_th
}

#[inline(always)]
pub(crate) fn spike_value<F: Real>(fired: bool) -> F {
    if fired {
        F::one()
    } else {
        F::zero()
    }
}

/// Advances a layer by one timestep, returning the new state and its spikes.
pub fn lif_step<F: Real>(
    state: &LifLayerState<F>,
    input_current: &[F],
    params: &LifParams<'_, F>,
) -> Result<(LifLayerState<F>, Vec<F>)> {
    let mut next = state.clone();
    next.advance(input_current, params)?;
    let spikes = next.spikes.clone();
    Ok((next, spikes))
}

/// Non-spiking integrator: `u' = tau * u + I`, and the prediction is `u'`.
pub fn output_step<F: Real>(u: &[F], input_current: &[F], tau: &[F]) -> Result<(Vec<F>, Vec<F>)> {
    check_width(u.len(), input_current.len(), tau.len())?;
    let next: Vec<F> = u
        .iter()
        .zip(input_current)
        .zip(tau)
        .map(|((&u, &i), &t)| integrate(u, i, t))
        .collect();
    Ok((next.clone(), next))
}

#[inline(always)]
pub(crate) fn integrate<F: Real>(u_prev: F, current: F, tau: F) -> F {
    tau * u_prev + current
}

/// Box-shaped stand-in for the derivative of the spike indicator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub half_width: f64,
}

impl Default for Surrogate {
    fn default() -> Self {
        Self { half_width: 0.5 }
    }
}

impl Surrogate {
    #[inline(always)]
    pub fn grad<F: Real>(&self, u: F, v_th: F) -> F {
        if (u - v_th).abs() < F::lit(self.half_width) {
            F::one()
        } else {
            F::zero()
        }
    }
}

/// Surrogate derivative with the default half-width of 0.5.
pub fn surrogate_grad<F: Real>(u: F, params: &LifParams<'_, F>) -> F {
    Surrogate::default().grad(u, params.v_th)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params(tau: &[f32]) -> LifParams<'_, f32> {
        LifParams::new(0.4, tau, ResetMode::SubtractThreshold).unwrap()
    }

    #[test]
    fn hand_evaluated_subtract_reset() {
        let tau = [0.5];
        let state = LifLayerState {
            u: vec![1.0f32],
            spikes: vec![1.0],
        };
        let (next, spikes) = lif_step(&state, &[0.3], &params(&tau)).unwrap();
        assert_abs_diff_eq!(next.u[0], 0.6, epsilon = 1e-6);
        assert_eq!(spikes, vec![1.0]);
    }

    #[test]
    fn zero_is_a_fixed_point() {
        for tau in [0.0f32, 0.3, 1.0] {
            let t = [tau];
            let (next, spikes) = lif_step(&LifLayerState::zeros(1), &[0.0], &params(&t)).unwrap();
            assert_eq!(next.u[0], 0.0);
            assert_eq!(spikes[0], 0.0);
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        let tau = [1.0f32];
        let (next, spikes) = lif_step(&LifLayerState::zeros(1), &[0.4], &params(&tau)).unwrap();
        assert_eq!(next.u[0], 0.4);
        assert_eq!(spikes[0], 1.0);
    }

    #[test]
    fn reset_to_zero_drops_residue() {
        let tau = [0.5f32];
        let p = LifParams::new(0.4, &tau, ResetMode::ResetToZero).unwrap();
        let state = LifLayerState {
            u: vec![1.0f32],
            spikes: vec![1.0],
        };
        let (next, spikes) = lif_step(&state, &[0.3], &p).unwrap();
        assert_abs_diff_eq!(next.u[0], 0.3, epsilon = 1e-7);
        assert_eq!(spikes[0], 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let tau = [0.5f32, 0.5];
        let err = lif_step(&LifLayerState::zeros(2), &[0.1], &params(&tau)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
        assert!(output_step(&[0.0f32], &[0.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(LifParams::new(0.0f32, &[0.5], ResetMode::SubtractThreshold).is_err());
        assert!(LifParams::new(0.4f32, &[1.5], ResetMode::SubtractThreshold).is_err());
    }

    #[test]
    fn output_integrator_examples() {
        let (u, pred) = output_step(&[0.2f32], &[0.1], &[1.0]).unwrap();
        assert_abs_diff_eq!(u[0], 0.3, epsilon = 1e-7);
        assert_eq!(u, pred);

        let (_, pred) = output_step(&[5.0f32], &[0.7], &[0.0]).unwrap();
        assert_eq!(pred[0], 0.7);

        let mut u = vec![0.25f32, -1.5];
        for _ in 0..5 {
            let (next, pred) = output_step(&u, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
            assert_eq!(pred, vec![0.25, -1.5]);
            u = next;
        }
    }

    #[test]
    fn surrogate_examples() {
        let tau = [0.5f32];
        let p = params(&tau);
        assert_eq!(surrogate_grad(0.4f32, &p), 1.0);
        assert_eq!(surrogate_grad(-0.2f32, &p), 0.0);
        // |0.9 - 0.4| = 0.5 sits on the excluded boundary. The difference is
        // exact in f64; in f32 the two literals are 0.49999997 apart.
        assert_eq!(Surrogate::default().grad(0.9f64, 0.4), 0.0);
        assert_eq!(surrogate_grad(0.9f32, &p), 1.0);
        assert_eq!(Surrogate::default().grad(-0.1f64, 0.4), 0.0);
    }

    #[test]
    fn surrogate_window_has_unit_area() {
        let v_th = 0.4f64;
        let n = 200_000;
        let (lo, hi) = (-2.0, 2.0);
        let du = (hi - lo) / n as f64;
        let area: f64 = (0..n)
            .map(|k| Surrogate::default().grad(lo + (k as f64 + 0.5) * du, v_th) * du)
            .sum();
        assert_abs_diff_eq!(area, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn subtract_reset_removes_threshold_once() {
        // u = 1.0 spiked last step; tau = 1, I = 0 for two steps
        let tau = [1.0f64];
        let p = LifParams::new(0.4, &tau, ResetMode::SubtractThreshold).unwrap();
        let s0 = LifLayerState {
            u: vec![1.0],
            spikes: vec![1.0],
        };
        let (s1, _) = lif_step(&s0, &[0.0], &p).unwrap();
        assert_abs_diff_eq!(s1.u[0], 0.6, epsilon = 1e-12);
        assert_eq!(s1.spikes[0], 1.0);
        let (s2, _) = lif_step(&s1, &[0.0], &p).unwrap();
        assert_abs_diff_eq!(s2.u[0], 0.2, epsilon = 1e-12);
        assert_eq!(s2.spikes[0], 0.0);
        let (s3, _) = lif_step(&s2, &[0.0], &p).unwrap();
        assert_abs_diff_eq!(s3.u[0], 0.2, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn spikes_are_threshold_indicator(
            u in prop::collection::vec(-3.0f32..3.0, 8),
            s in prop::collection::vec(prop::bool::ANY, 8),
            i in prop::collection::vec(-2.0f32..2.0, 8),
            tau in prop::collection::vec(0.0f32..=1.0, 8),
            zero_reset in prop::bool::ANY,
        ) {
            let mode = if zero_reset { ResetMode::ResetToZero } else { ResetMode::SubtractThreshold };
            let p = LifParams::new(0.4, &tau, mode).unwrap();
            let state = LifLayerState { u, spikes: s.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect() };
            let (a, spikes_a) = lif_step(&state, &i, &p).unwrap();
            let (b, spikes_b) = lif_step(&state, &i, &p).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(&spikes_a, &spikes_b);
            for (u, s) in a.u.iter().zip(&spikes_a) {
                prop_assert_eq!(*s == 1.0, *u >= 0.4);
                prop_assert!(*s == 0.0 || *s == 1.0);
            }
        }
    }
}
