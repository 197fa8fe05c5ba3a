pub mod attacks;
pub mod cli;
pub mod defenses;
pub mod diffcore;
pub mod envsuite;
pub mod error;
pub mod evalkit;
pub mod trainer;

pub use error::{Error, Result};
