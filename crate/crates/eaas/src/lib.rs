//! HTTP embedding service with per-user watermark transforms, a batched
//! client for bulk querying it, and the `embmark` command line.

pub mod cli;
pub mod client;
pub mod error;
pub mod files;
pub mod service;
pub mod wire;

pub use error::{EaasError, Result};
