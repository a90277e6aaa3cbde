//! Lower and upper value functions of two-player zero-sum stochastic
//! differential games whose cost is the first component of a doubly
//! reflected backward SDE.
//!
//! The value functions are computed through their characterisation as
//! solutions of double-obstacle Isaacs equations (module [`pde`]) and, at
//! fixed controls, through a lattice scheme for the reflected BSDE itself
//! (module [`rbsde`]). Module [`games`] ties the two together.
//!
//! Everything is generic over the scalar type ([`Scalar`], implemented for
//! `f32` and `f64`); the `*F64` aliases below name the common instances.

pub mod error;
pub mod forwardsim;
pub mod games;
pub mod grid;
pub mod model;
pub mod pde;
pub mod rbsde;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ProblemSpecF64 = model::ProblemSpec<f64>;
pub type CoefficientSetF64 = model::CoefficientSet<f64>;
pub type SpaceTimeGridF64 = grid::SpaceTimeGrid<f64>;
pub type ValueFieldF64 = pde::ValueField<f64>;
pub type RBSDESolutionF64 = rbsde::RBSDESolution<f64>;
pub type GameVerdictF64 = games::GameVerdict<f64>;

pub type ProblemSpecF32 = model::ProblemSpec<f32>;
pub type SpaceTimeGridF32 = grid::SpaceTimeGrid<f32>;
pub type ValueFieldF32 = pde::ValueField<f32>;
