#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod corpus;
pub mod diarization;
pub mod encoders;
pub mod error;
pub mod features;
pub mod kv;
pub mod losses;
pub mod numeric;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
