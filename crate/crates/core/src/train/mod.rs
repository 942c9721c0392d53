//! Spatio-temporal backpropagation with a surrogate spike derivative.

mod adamw;
mod backward;
mod fit;
mod gradcheck;
mod loss;
mod windows;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use backward::{backward, Gradients, LayerGrad};
pub(crate) use fit::append_line;
pub use fit::{fit, fit_with, validate, EpochRecord, LogHeader, TrainConfig, TrainLog, TrainOutcome, ValidationSet};
pub use gradcheck::numeric_grad_oracle;
pub use loss::{batch_loss, loss};
pub use windows::{make_windows, WindowDataset};
