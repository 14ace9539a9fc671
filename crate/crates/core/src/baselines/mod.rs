//! Baseline imputers.

pub mod fill;
pub mod iterative;
pub mod knn;
pub mod regression;
