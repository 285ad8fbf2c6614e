//! Staged training, checkpoints and evaluation.

mod checkpoint;
mod config;
mod evaluate;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, DirLock, FORMAT_VERSION, MAGIC};
pub use config::{Mode, TrainConfig};
pub use evaluate::{evaluate, explain_pair, reference_ratings, strip_eos, write_jsonl, EvalOptions, Evaluation, GenerationRow, PairExplanation, TraceRow};
pub use model::{Fingerprints, Model, StageReport, TrainState};
pub use train::{
    generator_attributes, predict_clipped, probe_pd, run_stage, run_stages, sentiment_cache, total_objective,
    trainable_sq_norm, with_eos, Terms, STAGES,
};
