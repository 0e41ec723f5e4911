//! Small differentiable building blocks: parameter storage, dense and LSTM
//! layers, a reverse-mode tape, SGD and a finite-difference gradient checker.

mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;

pub use gradcheck::{grad_check, BlockError, GradCheckReport};
pub use layers::{logistic, Activation, DenseLayer, LstmCell, LstmState};
pub use optim::sgd_step;
pub use params::{Checkpoint, ParamEntry, ParamId, ParamStore};
pub use tape::{Tape, Var};
