pub mod acoustics;
pub mod analysis;
pub mod dataset;
pub mod error;
pub mod io;
pub mod objectives;
pub mod rng;
pub mod separator;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
