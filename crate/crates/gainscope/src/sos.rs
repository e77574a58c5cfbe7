//! placeholder
pub struct Certificate;
pub struct SosProgram;
