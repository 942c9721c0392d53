use ndarray::ArrayView2;

use super::loss::batch_loss;
use crate::error::{Error, Result};
use crate::network::{forward_linearized, Mode, NetworkParams, NetworkSpec, ParamCoord, TrainingCache};
use crate::real::Real;

/// Central-difference derivative of the batch loss along one coordinate.
///
/// The spike function is replaced by its expansion around `reference`
/// (`s = s_ref + surrogate(u_ref) * (u - u_ref)`) and `reference`'s dropout
/// masks are reused, so the perturbed graph is smooth and its derivative is
/// exactly what [`super::backward`] computes at the reference point.
#[allow(clippy::too_many_arguments)]
pub fn numeric_grad_oracle<F: Real>(
    params: &NetworkParams<F>,
    spec: &NetworkSpec,
    inputs: ArrayView2<'_, F>,
    targets: ArrayView2<'_, F>,
    warmup_discard: usize,
    coord: ParamCoord,
    reference: &TrainingCache<F>,
    step: F,
) -> Result<F> {
    if reference.mode != Mode::Train {
        return Err(Error::Config(
            "finite differences need a training-mode reference pass".into(),
        ));
    }
    let base = params
        .get(coord)
        .ok_or_else(|| Error::Config(format!("no parameter at {coord:?}")))?;
    let (up, down) = (base + step, base - step);
    if up == base || down == base {
        return Err(Error::NonFinite {
            context: format!("finite-difference step {step} underflows at {base}"),
        });
    }
    let eval = |value: F| -> Result<F> {
        let mut p = params.clone();
        p.set(coord, value).expect("coordinate checked above");
        let cache = forward_linearized(&p, spec, inputs, reference)?;
        batch_loss(cache.predictions(), targets, reference.batch, warmup_discard)
    };
    Ok((eval(up)? - eval(down)?) / (up - down))
}
