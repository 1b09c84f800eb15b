pub mod audio;
pub mod error;
pub mod exec;
pub mod harness;
pub mod mirrornet;
pub mod plant;
pub mod spectro;
pub mod table;
pub mod tensor;

pub use error::{Error, Result};
