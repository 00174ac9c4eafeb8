//! Finite-element machinery shared by every weak form.

pub mod assembly;
pub mod dofmap;
pub mod dual;
pub mod element;
pub mod newton;
pub mod quadrature;
pub mod sparse;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeError {
    #[error("no quadrature rule of degree {degree} in dimension {dim}")]
    UnsupportedQuadrature { dim: usize, degree: usize },
}
