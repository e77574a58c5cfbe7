//! Parameter-dependent gain analysis for uncertain LTI systems.
//!
//! Given a linear system whose matrices depend polynomially or rationally on
//! an uncertain parameter vector, this crate computes certified upper and
//! lower bounds on the state-to-output and L2-induced gains of the mismatch
//! between the nominal and perturbed responses, as functions of the
//! parameters. Bounds are synthesized by compiling dissipation inequalities
//! into sum-of-squares programs, solving the resulting semidefinite programs
//! with an embedded interior-point method, and validating every certificate
//! a posteriori against pointwise-exact gain oracles.

pub mod bounds;
pub mod cert;
pub mod contour;
pub mod fixtures;
pub mod grid;
pub mod invariance;
pub mod oracle;
pub mod poly;
pub mod sdp;
pub mod sos;
pub mod system;

pub use bounds::{BoundKind, GainBound};
pub use poly::{Polynomial, RationalFunction, Var, VarKind};
pub use sdp::{SdpProblem, SdpSolution, SolveStatus};
pub use sos::{Certificate, SosProgram};
pub use system::{CascadeSystem, NumericStateSpace, ParamMatrix, UncertainSystem};
