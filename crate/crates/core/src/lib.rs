//! Stable neural flows: neural ODEs whose dynamics descend a learned energy,
//! trained with adjoint sensitivity analysis.

pub mod adjoint;
pub mod affine;
pub mod builder;
pub mod datasets;
pub mod dual;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod grad;
pub mod loss;
pub mod mlp;
pub mod model;
pub mod optim;
pub mod solver;
pub mod verification;

pub use error::{Error, Result};
