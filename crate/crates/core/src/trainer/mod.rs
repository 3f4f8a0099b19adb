//! Single-run training: Adam with linear decay (plus warmup and clipping
//! for the BERT reference), fresh data every step, and periodic evaluation
//! recorded as [`MetricRecord`] snapshots.

mod optim;
mod run;

pub use optim::{clip_global_norm, lr_at, Adam, Schedule, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use run::{
    accuracy_of, batch_accuracy, evaluate, evaluate_cases, train_run, train_run_typed, train_run_with, MetricRecord,
    Resolved, RunConfig, RunStatus, Snapshot, StepStats, Summary, TrainConfig, Trainer, BERT_CLIP_NORM,
    BERT_WARMUP_FRACTION, EVAL_BATCH_SIZE,
};

/// Steps for a batch-size sweep cell: the total number of training
/// sequences stays at 102,400.
pub fn steps_for_batch(batch: usize) -> usize {
    102_400 / batch.max(1)
}

/// Steps for a vocabulary sweep cell: `400 * S`.
pub fn steps_for_vocab(vocab: usize) -> usize {
    400 * vocab
}
