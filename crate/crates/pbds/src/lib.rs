//! Geometrically consistent fusion of Riemannian task behaviors into a single
//! robot acceleration policy on non-Euclidean configuration manifolds.
//!
//! A policy is assembled from tasks, each a smooth map from the configuration
//! manifold to a task manifold carrying a behavior metric, a potential,
//! dissipative forces, and a weighting pseudometric. The per-task desired
//! accelerations are pulled back through the task maps and fused by weighted
//! least squares into one chart-level acceleration. The result is invariant
//! to the choice of coordinate charts, which the bundled sphere scenarios and
//! the acceptance suite exercise directly against a chart-dependent baseline.

pub mod error;
pub mod gds;
pub mod manifold;
pub mod policy;
pub mod riemannian;
pub mod scenario;
pub mod sim;
pub mod task;
pub mod tree;

pub use error::{Error, Result};
pub use manifold::{ChartPoint, ChartScheme, EmbeddedPoint, ManifoldDescriptor, TangentState};
