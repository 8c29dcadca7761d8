//! Taylor–Hood finite element discretization of the channel flow.

pub mod assembly;
pub mod deterministic;
pub mod mesh;
pub mod operators;

pub use assembly::{Assembler, Split};
pub use deterministic::{DeterministicOptions, DeterministicSolution, DeterministicSolver, FlowField};
pub use mesh::{Dof, FlowKind, Geometry, Mesh, NodeTag};
pub use operators::Discretization;
