//! Synthetic data, experiments, checkpoints and scatter export.

pub mod checkpoint;
pub mod experiment;
pub mod scatter;
pub mod synth;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use experiment::{
    evaluate, run_experiment, train_model, ExperimentOutcome, ExperimentReport, ExperimentTag, RunConfig, TrainSummary,
    WerRow,
};
pub use scatter::{pearson, scatter_export, LossKind, ScatterConfig, ScatterInput, ScatterReport, ScatterRow};
pub use synth::{gen_data, read_dataset, write_dataset, Corpus, Dataset, Split, SynthSpec};
