//! Convolutional sparse coding networks for image fusion.
//!
//! The building block is a dictionary convolutional unit, one ISTA step with
//! learnable filters, batch normalisation and a shrinkage activation. Stacks
//! of units form the encoders of three fusion pipelines: infrared/visible
//! ([`pipelines::IvfnModel`]), multi-exposure ([`pipelines::MefnModel`]) and
//! guided multispectral super-resolution ([`pipelines::MmfnModel`]).
//!
//! ```
//! use cscfuse::csc::{auto_rho, ista_solve, random_dictionary, IstaProblem};
//! use cscfuse::tensor::{Shape, Tensor};
//!
//! let image = Tensor::<f64>::full(Shape::new(1, 1, 16, 16), 0.5);
//! let dict = random_dictionary(1, 8, 3, 0)?;
//! let rho = auto_rho(&dict, 16, 16)?;
//! let solution = ista_solve(&IstaProblem::new(image, dict, 0.1, rho, 50)?)?;
//! assert!(solution.trace[50] <= solution.trace[0]);
//! # Ok::<(), cscfuse::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod csc;
pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod pipelines;
pub mod task;
pub mod tensor;

pub use error::{Error, Result};
pub use task::Task;
