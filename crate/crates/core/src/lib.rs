//! Streaming regression: online-updated linear models with criterion-based
//! submodel selection, divide-and-conquer combination, bag of little
//! bootstraps, and out-of-core GLM fitting.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod numkernel;
pub mod onlinesel;
pub mod suffstats;

pub use data::Chunk;
pub use error::{Error, ErrorKind, Result};
pub mod blb;
pub mod chunkglm;
pub mod dnc;
pub mod family;
pub mod ingest;
pub mod simharness;
