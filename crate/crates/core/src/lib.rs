// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod error;
pub mod fsio;
pub mod fusion;
pub mod gauss;
pub mod interpret;
pub mod metrics;
pub mod net;
pub mod numkit;
pub mod objective;
pub mod pipeline;
pub mod score;
pub mod trainer;

pub use error::{Error, Result};
