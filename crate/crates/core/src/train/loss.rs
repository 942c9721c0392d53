use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::real::Real;

/// Mean squared error over timesteps `warmup_discard..T` and every output.
pub fn loss<F: Real>(predictions: ArrayView2<'_, F>, targets: ArrayView2<'_, F>, warmup_discard: usize) -> Result<F> {
    batch_loss(predictions, targets, 1, warmup_discard)
}

/// [`loss`] averaged over a time-major batch (row `t * batch + b`).
pub fn batch_loss<F: Real>(
    predictions: ArrayView2<'_, F>,
    targets: ArrayView2<'_, F>,
    batch: usize,
    warmup_discard: usize,
) -> Result<F> {
    let n = counted_rows(predictions, targets, batch, warmup_discard)?;
    let mut total = F::zero();
    for (p, y) in predictions
        .rows()
        .into_iter()
        .zip(targets.rows())
        .skip(warmup_discard * batch)
    {
        for (&a, &b) in p.iter().zip(y) {
            total += (a - b) * (a - b);
        }
    }
    Ok(total / F::lit((n * predictions.ncols()) as f64))
}

/// `dL/dprediction` for [`batch_loss`]; rows before the warm-up cut are zero.
pub(crate) fn loss_grad<F: Real>(
    predictions: ArrayView2<'_, F>,
    targets: ArrayView2<'_, F>,
    batch: usize,
    warmup_discard: usize,
) -> Result<Array2<F>> {
    let n = counted_rows(predictions, targets, batch, warmup_discard)?;
    let scale = F::lit(2.0 / (n * predictions.ncols()) as f64);
    let mut g = Array2::zeros(predictions.raw_dim());
    for (r, (p, y)) in predictions.rows().into_iter().zip(targets.rows()).enumerate() {
        if r < warmup_discard * batch {
            continue;
        }
        for k in 0..p.len() {
            g[[r, k]] = scale * (p[k] - y[k]);
        }
    }
    Ok(g)
}

fn counted_rows<F: Real>(p: ArrayView2<'_, F>, y: ArrayView2<'_, F>, batch: usize, discard: usize) -> Result<usize> {
    if p.dim() != y.dim() {
        return Err(Error::shape(
            "loss targets",
            format!("{:?}", p.dim()),
            format!("{:?}", y.dim()),
        ));
    }
    if batch == 0 || !p.nrows().is_multiple_of(batch) {
        return Err(Error::shape("loss rows", format!("multiple of {batch}"), p.nrows()));
    }
    let steps = p.nrows() / batch;
    if discard >= steps {
        return Err(Error::Config(format!(
            "warm-up discard {discard} leaves no timesteps out of {steps}"
        )));
    }
    Ok((steps - discard) * batch)
}
