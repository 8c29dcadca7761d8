//! Low-rank stochastic Galerkin solver for the steady incompressible
//! Navier–Stokes equations with a random viscosity field.

pub mod error;
pub mod fem;
pub mod geometry;
pub mod gpc;
pub mod kron;
pub mod lowrank;
pub mod lrgmres;
pub mod monte_carlo;
pub mod nonlinear;
pub mod precond;
pub mod problem;
pub mod random_field;
pub mod reference;
pub mod scalar;
pub mod sparse;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type LowRankVec64 = lowrank::LowRankVec<f64>;
pub type LowRankVec32 = lowrank::LowRankVec<f32>;
pub type Factored64 = lowrank::Factored<f64>;
pub type Factored32 = lowrank::Factored<f32>;
pub type GpcBasis64 = gpc::GpcBasis<f64>;
pub type GpcBasis32 = gpc::GpcBasis<f32>;
pub type KronOperator64 = kron::KronOperator<f64>;
pub type KronOperator32 = kron::KronOperator<f32>;
