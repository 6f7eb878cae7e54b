//! Measuring and removing source bias in dual-encoder retrieval over corpora
//! that mix real and generated items.
//!
//! The crate works on embedding vectors only. A typical pipeline:
//!
//! ```
//! use sourcebias::{evaluate_bias, synthesize, MetricSpec, SynthConfig};
//!
//! let cfg = SynthConfig { num_queries: 200, ..SynthConfig::default() };
//! let synth = synthesize(&cfg).unwrap();
//! let report = evaluate_bias(&synth.dataset, &MetricSpec::defaults()).unwrap();
//! assert_eq!(report.queries, 200);
//! ```

pub mod analysis;
pub mod bias;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod ranking;
pub mod stats;
pub mod storage;
pub mod synth;
pub mod train;

pub use analysis::{
    aggregation_check, extract_transforms, oracle_alignment, project_2d, reverse_transform_eval,
    Alignment, Projection, ReverseMode, ReverseReport, ShiftSign, TransformSet,
};
pub use bias::{
    evaluate_bias, parity_check, relative_delta, score_distribution, select_candidate, BiasReport,
    CandidateSet, MetricRow, ParityResult, ScoreDistribution,
};
pub use dataset::{
    l2_normalize, validate_dataset, CorpusItem, Dataset, EmbeddingTable, Provenance, Query, Seed,
    Triple, ValidationIssue, ValidationReport,
};
pub use encoder::{
    encode, init_model, model_score, DualEncoderModel, GradientSet, HeadGradient, Init,
    ProjectionHead,
};
pub use error::{Error, Result};
pub use ranking::{mean_metric, metric_at, rank_corpus, score, MetricKind, MetricSpec, RankedList};
pub use synth::{mix_training_set, synthesize, SynthConfig, SynthDataset, TrainingPair};
pub use train::{
    base_loss, delta_s, gradients, sample_b, sweep_alpha, sweep_beta, total_loss, train,
    AlphaRow, Batch, BetaRow, EpochTrace, LossSpec, PenaltyMode, PenaltyTarget, SweepAlphaReport,
    SweepBetaReport, TrainConfig, TrainTrace,
};
