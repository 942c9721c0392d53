//! Row-chunked matrix products.
//!
//! Chunk boundaries depend only on the row count, never on the number of
//! worker threads, so results are identical for any rayon pool size.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::real::Real;

const ROW_CHUNK: usize = 128;

fn chunk_starts(rows: usize) -> Vec<usize> {
    (0..rows).step_by(ROW_CHUNK).collect()
}

fn stack_rows<F: Real>(parts: Vec<Array2<F>>, cols: usize) -> Array2<F> {
    if parts.is_empty() {
        return Array2::zeros((0, cols));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).expect("chunks share a column count")
}

/// `x · w`
pub(crate) fn matmul<F: Real>(x: ArrayView2<'_, F>, w: ArrayView2<'_, F>) -> Array2<F> {
    let rows = x.nrows();
    let parts: Vec<Array2<F>> = chunk_starts(rows)
        .into_par_iter()
        .map(|start| {
            let end = (start + ROW_CHUNK).min(rows);
            x.slice(s![start..end, ..]).dot(&w)
        })
        .collect();
    stack_rows(parts, w.ncols())
}

/// `g · wᵀ`
pub(crate) fn matmul_transposed<F: Real>(g: ArrayView2<'_, F>, w: ArrayView2<'_, F>) -> Array2<F> {
    matmul(g, w.t())
}

/// `xᵀ · g`, reduced over row chunks in index order.
pub(crate) fn weight_grad<F: Real>(x: ArrayView2<'_, F>, g: ArrayView2<'_, F>) -> Array2<F> {
    let rows = x.nrows();
    let partials: Vec<Array2<F>> = chunk_starts(rows)
        .into_par_iter()
        .map(|start| {
            let end = (start + ROW_CHUNK).min(rows);
            x.slice(s![start..end, ..]).t().dot(&g.slice(s![start..end, ..]))
        })
        .collect();
    let mut total = Array2::zeros((x.ncols(), g.ncols()));
    for p in &partials {
        total += p;
    }
    total
}
