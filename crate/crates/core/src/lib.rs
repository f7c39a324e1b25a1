//! Capacity of positive unital trace-preserving maps between finite-dimensional
//! C*-algebras, computed directly by ensemble optimisation or through the
//! reduction to ergodic corner maps.

pub mod algebra;
pub mod basis;
pub mod capacity;
pub mod definite;
pub mod error;
pub mod map;
pub mod parse;
pub mod reduction;
pub mod report;

pub use algebra::{AlgebraShape, Element, State, C64};
pub use error::{Error, Result};
pub use map::{Certificate, PtpuMap};
