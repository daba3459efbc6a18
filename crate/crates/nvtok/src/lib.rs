//! File formats, annotation parsing, chat records and the `nvtok` command
//! line for the [`nvtok_core`] motion tokenizer.

pub mod annotation;
pub mod api;
pub mod chat;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;

pub use error::{Error, Result};
