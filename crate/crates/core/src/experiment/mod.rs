//! Training, metrics and the leave-one-subject-out experiment runners.

mod loso;
pub mod metrics;
mod optim;
mod report;
mod train;

pub use loso::{ablate, run_loso, sweep_patch_length, EpochObserver, LosoOptions, SWEEP_LENGTHS};
pub use metrics::{accuracy, macro_f1, roc_auc};
pub use optim::{adam_step, cosine_lr, AdamConfig, AdamState};
pub use report::{
    config_fingerprint, metric_definitions, summary_table, Aggregate, ExperimentReport, FoldHistory, MeanStd,
    SubjectRow, CSV_HEADER, REPORT_FORMAT_VERSION, STD_CONVENTION,
};
pub use train::{fit, predict, train, EpochRecord, Predictions, TrainConfig, TrainOutcome};

use crate::error::Result;
use crate::numerics::{Scalar, Tape, Var};

/// Mean cross-entropy of `logits [B, K]` against integer labels.
pub fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.softmax_cross_entropy(logits, labels)
}
