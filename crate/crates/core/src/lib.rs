pub mod avcore;
pub mod bandit;
pub mod cli;
pub mod error;
pub mod expserve;
pub mod mixopt;
pub mod multitest;
pub mod numeric;
pub mod simlab;

pub use error::{Error, Result};
