//! Multitask fine-tuning and evaluation of encoder-only language models on
//! Vietnamese educational comments (sentiment and topic classification).

pub mod corpus;
pub mod error;
pub mod evalx;
pub mod llmbench;
pub mod model;
pub mod normalize;
pub mod objectives;
pub mod ops;
pub mod train;

pub use error::{Error, Result};
