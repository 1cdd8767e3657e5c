//! Numerical engine for left-invariant (sub-)Riemannian metrics on simply
//! connected nilpotent Lie groups of step 2, with just enough step-3 support
//! for the Engel experiments.
//!
//! The building blocks: Lie algebras by structure constants and the
//! polynomial group law (`algebra`), horizontal controls and endpoint maps
//! (`controls`), energy-bounded vertical perturbations (`perturbation`),
//! explicit geodesic families (`geodesics`), distance estimation as
//! lower/upper brackets (`metrics`), and reproducible experiment drivers
//! (`experiments`).

pub mod algebra;
pub mod controls;
pub mod error;
pub mod experiments;
pub mod geodesics;
pub mod linalg;
pub mod metrics;
pub mod perturbation;
pub mod rng;

pub use algebra::{
    bundled_names, bundled_spec, graph_isometry, load_bundled, load_structure_path,
    load_structure_str, shear_automorphism, Automorphism, GroupPoint, NilpotentAlgebraSpec,
    SubRiemannianStructure,
};
pub use controls::{FourierControl, SampledControl};
pub use error::{NilgeoError, Result};
pub use metrics::{DistanceEstimate, SolverBudget};
pub use perturbation::{BracketDecomposition, PerturbationResult};

/// Version string embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
