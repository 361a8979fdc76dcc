//! Sparse log-linear intensity and conditional-intensity estimation for
//! planar point processes.

pub mod error;
pub mod fit;
pub mod geometry;
pub mod io;
pub mod model;
pub mod numeric;
pub mod quadrature;
pub mod selection;
pub mod simulate;
pub mod solver;
pub mod study;

pub use error::{Error, Result};
