//! Load-shedding control for fault-induced delayed voltage recovery.

pub mod curriculum;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod grid;
pub mod pars;
pub mod pool;
pub mod report;
pub mod scenario;

pub use error::{Error, Result};
