//! Retrieval-augmented clarifying-question generation at desk scale.

pub mod decode;
pub mod error;
pub mod eval;
pub mod lm;
pub mod pipeline;
pub mod retrieval;
pub mod seed;
pub mod train;
pub mod text;

pub use error::{RacError, Result};
