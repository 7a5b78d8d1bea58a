//! MOSS: a modular task-oriented dialog framework trained end to end with
//! per-module supervision.

pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod kb;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{MossError, Result};
