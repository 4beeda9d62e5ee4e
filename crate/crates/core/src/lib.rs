//! Semi-classical heat kernels on constant-curvature model manifolds.
//!
//! The crate builds the cutoff parametrix `khat^(N)` for `H = hbar^2 (Delta + W) + V`
//! acting on sections of a trivial `R^m` bundle, together with the spectral
//! ground truth it is measured against and the quantum/classical partition
//! functions with their Golden-Thompson type upper bounds.
//!
//! Module map:
//!
//! * [`geometry`] closed-form distances, geodesics, the volume-distortion
//!   function `G` and model ball volumes.
//! * [`fields`] symmetric matrix utilities and endomorphism fields `V`, `W`.
//! * [`parametrix`] transport propagator, coefficients `phi_j`, the cutoff
//!   kernel and its heat-equation residual.
//! * [`spectral`] exact spectra and Fourier-Galerkin decompositions used as
//!   oracles for kernels and traces.
//! * [`partition`] `Z_Q`, `Z_C`, heat-coefficient fits and the explicit bounds.

pub mod cache;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod operator;
pub mod parametrix;
pub mod partition;
pub mod quadrature;
pub mod regression;
pub mod spectral;

pub use error::{Error, Result};
pub use fields::{EndomorphismField, FieldDescriptor, SymMatrix};
pub use geometry::{ManifoldKind, ModelManifold, Point};
pub use operator::SemiclassicalOperator;
pub use parametrix::{ParametrixConfig, ParametrixEvaluation};
pub use partition::{BoundConstants, PartitionReport};
pub use spectral::{SpectralDecomposition, SpectralMode};
