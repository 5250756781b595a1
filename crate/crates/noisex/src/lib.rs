//! File formats, configuration and the experiment runner around
//! `noisex-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod featcache;
pub mod history;
pub mod manifest;
pub mod report;
pub mod wavio;

mod binfmt;

pub use error::{Error, Result};
