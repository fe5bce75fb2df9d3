pub mod cli;
pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod linalg;
pub mod ll1;
pub mod rng;
pub mod search;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DenseTensor3, Matrix, Mode};
