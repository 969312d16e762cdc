pub mod cli;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod montecarlo;
pub mod operators;
pub mod pcg;
pub mod preconditioner;
pub mod randomfield;
pub mod verify;

pub use error::{Error, Result};
