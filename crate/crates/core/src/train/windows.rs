use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::real::Real;

/// Sliding windows over a standardized frame sequence.
///
/// Samples are stored as start offsets into the shared sequence, so
/// overlapping windows cost no extra memory.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowDataset {
    features: Array2<f32>,
    targets: Array2<f32>,
    starts: Vec<usize>,
    window_len: usize,
}

/// Cuts `window_len`-frame windows with `overlap` frames shared between
/// consecutive windows.
pub fn make_windows(
    features: Array2<f32>,
    targets: Array2<f32>,
    window_len: usize,
    overlap: usize,
) -> Result<WindowDataset> {
    if features.nrows() != targets.nrows() {
        return Err(Error::shape("window targets", features.nrows(), targets.nrows()));
    }
    if window_len == 0 || overlap >= window_len {
        return Err(Error::Config(format!(
            "overlap {overlap} must be below window length {window_len}"
        )));
    }
    let n = features.nrows();
    if n < window_len {
        return Err(Error::InsufficientData(format!(
            "{n} frames cannot fill a {window_len}-frame window"
        )));
    }
    let stride = window_len - overlap;
    let starts = (0..=n - window_len).step_by(stride).collect();
    Ok(WindowDataset {
        features,
        targets,
        starts,
        window_len,
    })
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn input_width(&self) -> usize {
        self.features.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.targets.ncols()
    }

    pub fn start(&self, i: usize) -> usize {
        self.starts[i]
    }

    /// `(features, targets)` of sample `i`, each `window_len` rows.
    pub fn sample(&self, i: usize) -> (ArrayView2<'_, f32>, ArrayView2<'_, f32>) {
        let a = self.starts[i];
        let b = a + self.window_len;
        (self.features.slice(s![a..b, ..]), self.targets.slice(s![a..b, ..]))
    }

    /// Stacks the selected samples time-major: row `t * len(indices) + b`.
    pub fn gather<F: Real>(&self, indices: &[usize]) -> (Array2<F>, Array2<F>) {
        let b = indices.len();
        let rows = self.window_len * b;
        let mut x = Array2::zeros((rows, self.input_width()));
        let mut y = Array2::zeros((rows, self.output_width()));
        for (k, &i) in indices.iter().enumerate() {
            let start = self.starts[i];
            for t in 0..self.window_len {
                let r = t * b + k;
                x.row_mut(r)
                    .iter_mut()
                    .zip(self.features.row(start + t))
                    .for_each(|(d, &v)| *d = F::lit(v as f64));
                y.row_mut(r)
                    .iter_mut()
                    .zip(self.targets.row(start + t))
                    .for_each(|(d, &v)| *d = F::lit(v as f64));
            }
        }
        (x, y)
    }
}
