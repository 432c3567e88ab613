pub mod clio;
pub mod error;
pub mod eval;
pub mod model;
pub mod numcore;
pub mod prompting;
pub mod reranker;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
