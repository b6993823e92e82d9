//! Desk-scale log-linear attention with Fenwick-tree hierarchical memory and
//! learned memory-level weighting.

pub mod attention;
pub mod model;
pub mod optim;
pub mod tasks;
pub mod checkpoint;
pub mod error;
pub mod fenwick;
pub mod gradcheck;
pub mod harness;
pub mod lambda;
pub mod math;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
