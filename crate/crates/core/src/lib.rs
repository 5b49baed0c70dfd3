pub mod backbone;
pub mod backend;
pub mod config;
pub mod error;
pub mod eval;
pub mod flow;
pub(crate) mod io;
pub mod motion;
pub mod perceiver;
pub mod selftest;
pub mod training;
pub mod world;

pub use error::{Error, Result};
