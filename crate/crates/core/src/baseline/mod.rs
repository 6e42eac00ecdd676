//! Feature-based static clustering used as the comparison pipeline.

mod features;
mod ward;

pub use features::{extract_features, standardize, FeatureVector, FEATURE_NAMES};
pub use ward::{agglomerative_cluster, Dendrogram};
