pub mod bench;
pub mod error;
pub mod estimators;
pub mod gmm;
pub mod gradcheck;
pub mod kde;
pub mod landau;
pub mod model;
pub mod optim;
pub mod rngutil;
pub mod sample;
pub mod tape;
pub mod training;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
