//! Trajectory archetypes: embedding, density clustering, diagnostics,
//! stability checks, profiles and a back-prediction classifier.

mod classifier;
mod dbscan;
mod embed;
mod metrics;
mod preprocess;
mod profile;
mod report;
mod stability;

pub use classifier::{train_classifier, ClassifierReport, FeatureImportance};
pub use dbscan::{dbscan, ClusterLabels, NOISE};
pub use embed::{embed_pca, Embedder, Embedding, Pca};
pub use metrics::{
    adjusted_rand_index, calinski_harabasz, davies_bouldin, diagnostics, elbow, kmeans, silhouette,
    silhouette_samples, ClusterDiagnostics, KMeansFit,
};
pub use preprocess::{kdistance, standardize, KDistance, Standardized};
pub use profile::{profile_archetypes, ArchetypeProfile, ProfileInput, RiskBand, RiskThresholds};
pub use report::{run_archetypes, ArchetypeConfig, ArchetypeReport, HeatmapRow};
pub use stability::{
    bootstrap_stability, permutation_test, run_pipeline, BootstrapSummary, PermutationSummary, PipelineConfig,
    PipelineRun, StabilityReport,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArchetypeError {
    #[error("AllColumnsDegenerate: every column has zero variance")]
    AllColumnsDegenerate,
    #[error("need at least two rows, got {0}")]
    TooFewRows(usize),
    #[error("BadDimension: requested {requested} components, at most {max} available")]
    BadDimension { requested: usize, max: usize },
    #[error("BadK: k={k} must satisfy 1 <= k < n={n}")]
    BadK { k: usize, n: usize },
    #[error("TooFewClusters: found {0} non-noise clusters, need at least 2")]
    TooFewClusters(usize),
    #[error("SingleClass: classifier needs at least two classes")]
    SingleClass,
    #[error("invalid parameter: {0}")]
    BadParam(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}
