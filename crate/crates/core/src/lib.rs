//! Semi-supervised clustering with pairwise constraints.
//!
//! The engine alternates between an assignment step, solved exactly as a
//! binary program over (optionally reduced) candidate clusters, and a
//! centroid update step. Hard must-link constraints are contracted away up
//! front; hard cannot-link constraints are enforced by the assignment solver;
//! soft must-link and cannot-link constraints carry a confidence weight and
//! are penalized in the objective.
//!
//! Module map:
//!
//! - [`instance_io`]: datasets, constraint sets, run configuration, reports.
//! - [`preprocess`]: must-link contraction into a weighted graph.
//! - [`geometry`]: distances, q-nearest-center queries, weighted centroids.
//! - [`model`]: candidate sets, edge filtering, penalty, LP export.
//! - [`assign_solver`]: exact branch-and-bound for the assignment step.
//! - [`engine`]: the outer loop with repositioning and search-space enlargement.
//! - [`metrics`]: ARI, Silhouette, Inertia, violation counts.
//! - [`constraint_gen`]: noise-free and noisy constraint-set generation.

pub mod assign_solver;
pub mod constraint_gen;
pub mod engine;
pub mod geometry;
pub mod instance_io;
pub mod kdtree;
pub mod metrics;
pub mod model;
pub mod preprocess;
mod union_find;

pub use assign_solver::{SolverOptions, SolverResult, SolverStatus};
pub use engine::{run, EngineError, RunOutcome, Solution};
pub use geometry::CenterSet;
pub use instance_io::{ConstraintSet, Dataset, RunConfig};
pub use metrics::MetricsBundle;
pub use model::AssignmentModel;
pub use preprocess::ContractedGraph;
