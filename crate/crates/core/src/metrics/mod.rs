//! Segmentation metrics, feature-distribution distances and embeddings.

pub mod embed;
pub mod features;
pub mod fid;
pub mod hausdorff;
pub mod linalg;
pub mod overlap;
pub mod report;

pub use embed::{pca, pca_reduce, perplexity_affinities, tsne_embed, EmbeddingResult, Pca, TsneConfig};
pub use features::{FeatureExtractor, FEATURE_SEED, TAPS};
pub use fid::{feature_stats, fid, image_stats, FeatureStats};
pub use hausdorff::{hausdorff, DEFAULT_PERCENTILE};
pub use linalg::{matrix_sqrt, trace_sqrt, Matrix};
pub use overlap::{avd, dice, fpr, lesion_components, lesion_f1, lesion_recall, Components, Connectivity};
pub use report::{cov_ratio, evaluate_manifest, evaluate_model, evaluate_predictions, slice_stacks, score_case, MetricsRecord, MetricsReport, Summary, METRIC_NAMES};
