//! Joint cross-entropy / REINFORCE training and evaluation.

mod eval;
mod loss;
mod optim;
mod trainer;

pub use eval::{evaluate, evaluate_sampled, mean_std, EvalMode, EvalReport, SampledSummary, DEFAULT_EVAL_BATCH};
pub use loss::{
    classification_loss, joint_loss, mean_entropy, per_example_ce, reinforce_surrogate, EpisodeOutcome,
};
pub use optim::{clip_gradients, Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use trainer::{train, train_step, LogRecord, StepStats, TrainConfig, TrainOutcome};
