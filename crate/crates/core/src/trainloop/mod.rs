//! Optimization, the Stage-2 training loop and cross-validation orchestration.

mod cv;
mod optim;
mod train;

pub use cv::{evaluate_student, run_cv, student_embeddings, CvPlan, GridPoint, RunOutcome};
pub use optim::{optimizer_step, AdamWState, OptimConfig};
pub use train::{
    bank_checksum, check_seed_pairing, core_scores, run_seeds, split_digest, train_student,
    validation_balanced_accuracy, DistillSettings, EpochRecord, FoldData, RunManifest, RunStatus, StudentTrainConfig,
    TrainedStudent,
};
