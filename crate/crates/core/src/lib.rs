//! Energy-based physics-informed neural networks for the planar deformation of
//! Fin Ray soft fingers, with a constant-strain-triangle finite-element solver
//! as the reference.
//!
//! Units throughout are millimetres and MPa.

pub mod autodiff;
pub mod elasticity;
pub mod evaluation;
pub mod experiment;
pub mod fem;
pub mod geometry;
pub mod network;
pub mod training;

pub use elasticity::{MaterialModel, Strain2, Stress2};
pub use evaluation::{MarkerDisplacement, MetricsReport};
pub use experiment::{ExperimentSpec, Variant};
pub use fem::{FemProblem, FemSolution};
pub use geometry::{Domain2D, FinRayParams, Point2, TriangleMesh};
pub use network::{DisplacementNet, NetworkConfig};
pub use training::{LossRecord, PointSets, TrainConfig};
