//! Finite-dimensional toolkit for ternary rings of operators (TROs).
//!
//! Builds the linking algebras of a TRO `T ⊆ B(H, K)` and of a sub-TRO `X`,
//! extends a contractive idempotent `P: T → X` to the block conditional
//! expectation `E: A_T → A_X`, and verifies every step numerically.

pub mod cli;
pub mod error;
pub mod expectation;
pub mod gen;
mod linalg;
pub mod mats;
pub mod report;
pub mod sample;
pub mod tro;
pub mod wstar;

pub use error::{Error, Result};
pub use mats::{ComplexMatrix, SubspaceBasis, ToleranceProfile, C64};
pub use tro::Tro;
