//! The two reference systems shipped with the repository.

/// `systems/numeric.sys`: first-order system with affine dependence on two
/// boxed parameters.
pub const NUMERIC_EXAMPLE: &str = include_str!("../../../systems/numeric.sys");

/// `systems/analytic.sys`: scalar autonomous system with rational dependence,
/// loaded in normalized deviation coordinates.
pub const ANALYTIC_EXAMPLE: &str = include_str!("../../../systems/analytic.sys");
