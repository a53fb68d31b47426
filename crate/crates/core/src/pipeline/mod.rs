//! End-to-end plumbing behind the command-line tool: configuration,
//! manifests, synthetic corpora, training, embedding, scoring and sweeps.

pub mod config;
pub mod embed;
pub mod gradcheck;
pub mod ident;
pub mod manifest;
pub mod score;
pub mod sweep;
pub mod synth;
pub mod train;

pub use config::{EvalConfig, OptimizerConfig, RunConfig, WarmStartConfig};
pub use embed::{embed_utterances, EmbeddingStore};
pub use ident::{evaluate_ident, IdentReport};
pub use manifest::{Manifest, ManifestRecord, Split, Utterances};
pub use score::{read_trials, verify, write_scores, write_trials, VerificationReport};
pub use sweep::{run_sweep, AugmentStage, CellMetrics, SweepAxis, SweepData, SweepOptions, SweepRow};
pub use synth::{synth_data, SynthCorpus, SyntheticSpec};
pub use train::{train, StepLog, TrainOptions, TrainOutcome, Trainer};
