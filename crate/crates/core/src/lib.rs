//! Domain-shift measurement and unsupervised domain adaptation for
//! two-stream VQA models.

pub mod adapt;
pub mod benchmark;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kernel_stats;
pub mod nn;
pub mod shift;
pub mod text_syntax;
pub mod vqa;

pub use benchmark::{generate_benchmark, Benchmark, BenchmarkSpec, QuestionTemplate};
pub use data::{split_dataset, Sample, ToyDataset, UnlabeledView};
pub use error::{Error, Result};
pub use kernel_stats::{
    median_bandwidth, mmd_squared_biased, mmd_squared_unbiased, moment_distance, Bandwidth, FeatureMatrix,
    KernelConfig, Modality,
};
pub use nn::{FdLoss, LambdaSchedule, MlpModel, TrainConfig};
pub use shift::{make_shifted_dataset, AdainParams, PerturbParams, ShiftSpec};
pub use text_syntax::{corpus_syntax_matrix, syntax_features, tokenize, QuestionRecord, SyntaxFeatureSet};
pub use vqa::{build_shared_vocab, evaluate_accuracy, normalized_transfer, AnswerVocabulary, TransferResult, VqaModel};
