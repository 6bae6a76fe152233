//! Higher-order localized orthogonal decomposition (LOD) on Cartesian meshes
//! of the square, with continuous and discontinuous constraint spaces.

pub mod basis;
pub mod constraints;
pub mod corrector;
pub mod error;
pub mod fem;
pub mod gpe;
pub mod grid;
pub mod harness;
pub mod helmholtz;
pub mod interp;
pub mod linalg;
pub mod lodsolve;
pub mod par;
pub mod problems;
pub mod quadrature;

pub use error::{Error, Result};
