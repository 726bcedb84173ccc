//! Failure-mode mining over per-image feature vectors.
//!
//! Given features from a robust model's representation layer together with
//! true and predicted labels, this crate groups images by label or
//! prediction, ranks features by mutual information with the failure flag,
//! induces shallow decision trees, and reports the leaves with high error
//! concentration as human-readable rules.

pub mod dataset;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod report;
pub mod rules;
pub mod selection;
mod split;
pub mod synth;
pub mod tree;
pub mod viz;

pub use dataset::{load_bundle, ClassIndex, DatasetBundle, EvalRecord, FeatureMatrix, Grouping, GroupingKind};
pub use error::{Error, Result};
pub use metrics::ClusterStats;
pub use report::{AnalysisReport, SweepSummary};
pub use rules::{AnalysisConfig, FailureMode, GroupAnalysis};
pub use selection::FeatureScore;
pub use tree::{DecisionTree, SplitPredicate, TreeNode};
