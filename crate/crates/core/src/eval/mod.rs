//! Classification metrics, the clean/attacked accuracy harness and logit export.

mod export;
mod metrics;
mod robustness;

pub use export::{export_embeddings, format_sig, pca2, write_csv, EmbeddingRow, Projector};
pub use metrics::{argmax, classify_metrics, level_accuracy, logits_for, predict, ClassReport, MetricsReport};
pub use robustness::{
    attack_for, counterpart_attacks, default_step_size, robustness_eval, sample_examples, RobustnessReport,
};
