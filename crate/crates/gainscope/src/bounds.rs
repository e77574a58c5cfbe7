//! placeholder
pub struct GainBound;
pub enum BoundKind {}
