//! Two-weight inequalities for vector-valued positive dyadic operators on
//! finite dyadic trees: operator norms, testing constants, stopping families,
//! A∞ and Carleson characteristics, and a scalar Bellman function.

pub mod bellman;
pub mod constants;
pub mod dyadic;
pub mod experiments;
pub mod generate;
pub mod instance;
pub mod lattice;
pub mod operators;
pub mod optimize;
pub mod report;
pub mod stopping;

pub use dyadic::{CubeFunction, CubeId, DyadicError, DyadicSystem, Weight};
pub use instance::{InstanceError, ProblemInstance};
pub use lattice::{Exponent, LatticeError, LatticeSpace, LatticeVector};
pub use operators::{CubeFilter, OperatorError, PositiveKernel, SequenceKernelSpec};
