//! Minimal reverse-mode training substrate over a fixed layer vocabulary:
//! a text-CNN encoder, an LSTM cell, dense heads, softmax losses and an
//! SGD optimizer, all in `f64`.

mod checkpoint;
mod conv;
mod dense;
mod error;
mod gradcheck;
mod loss;
mod lstm;
mod objective;
mod optim;
mod param;
mod tensor;

pub use checkpoint::{from_checkpoint_str, load_checkpoint, save_checkpoint, to_checkpoint_string, FORMAT_VERSION};
pub use conv::{CnnCache, CnnConfig, TextCnnEncoder};
pub use dense::{Activation, Dense, DenseCache, DenseHead, FinalActivation, HeadCache};
pub use error::{NnError, Result};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use loss::{argmax, cross_entropy, entropy, log_softmax, softmax};
pub use lstm::{LstmCell, LstmState, LstmStepCache};
pub use objective::{backward_and_step, Objective};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind, StepStats};
pub use param::{Param, Parameters};
pub use tensor::{dot, l2_norm, Tensor};
