//! Configuration, persistence and orchestration for the few-shot diffusion
//! pipeline in `cdm-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod seeds;
pub mod store;
pub mod table;

pub use config::RunConfig;
pub use error::{ConfigError, ForgeError, Result};
