//! Evaluation tooling: gradient comparison, loss landscapes, efficiency
//! metrics and the finite-difference oracle.

mod compare;
mod finite_diff;
mod landscape;
mod metrics;

pub use compare::{compare_grads, cosine_similarity, estimator_grad, BlockCosine, Cosine, GradReport};
pub use finite_diff::{central_difference, finite_diff_grad};
pub use landscape::{
    filter_normalize, loss_landscape, loss_landscape_along, loss_landscape_with, pca_directions, project_trajectory,
    project_trajectory_onto, random_directions, LandscapeGrid, LandscapeOptions,
};
pub use metrics::{metrics, MetricSummary};
