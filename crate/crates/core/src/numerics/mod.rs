//! Low-level numerical building blocks shared by the transform engine and the
//! state-evolution code.

pub mod quad;
pub mod roots;
pub mod series;

pub use quad::{integrate, QuadError};
pub use roots::{brent, expand_upward, RootError};
