pub mod cli;
pub mod dirichlet;
pub mod error;
pub mod fricke;
pub mod fuchsian;
pub mod huber;
pub mod hyperbolic;
pub mod io;
pub mod mp;
pub mod orbisurface;
pub mod quadrature;
pub mod selberg;
pub mod synthetic;

pub use error::{Error, Result};
