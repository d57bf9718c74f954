//! A small LSTM engine: forward pass, exact BPTT, Adam, gradient checking,
//! minibatch training and checkpoints.

mod adam;
mod checkpoint;
mod gradcheck;
mod lstm;
mod trainer;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, DEFAULT_DELTA, DENOMINATOR_FLOOR};
pub use lstm::{
    backward, forward_sequence, log_softmax, lstm_step, softmax, CellOutput, DropoutMask, ForwardCache, Gate,
    LayerParameters, LstmShape, LstmState, Sequence, SparseSeq,
};
pub use trainer::{
    argmax, batch_gradient, curves_csv, evaluate, init_parameters, train, EarlyStopping, EvalMetrics, EvalRecord,
    LstmConfig, StopReason, TrainConfig, TrainOutcome, Verdict, GRADIENT_CHUNK,
};
