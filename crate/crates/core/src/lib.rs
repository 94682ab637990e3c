//! Immersed finite cell solver on multi-level hp meshes with block Additive-Schwarz
//! preconditioning.

pub mod assembly;
pub mod basis;
pub mod blocks;
pub mod config;
pub mod dense;
pub mod dofs;
pub mod error;
pub mod geometry;
pub mod krylov;
pub mod mesh;
pub mod output;
pub mod partition;
pub mod precond;
pub mod problem;
pub mod quadrature;
pub mod sparse;
pub mod study;
pub mod verify;

pub use error::{FcmError, Result};
