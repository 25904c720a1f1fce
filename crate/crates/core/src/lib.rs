pub mod diagnostics;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod instance;
pub mod linalg;
pub mod model;
pub mod nikaido;
pub mod oracle;
pub mod ppa;
pub mod vi;

pub use error::{Error, Result};
