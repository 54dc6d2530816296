//! Temporal point-cloud sequence denoising by gradient fields and rigid-body
//! patch correspondence.

pub mod bench;
pub mod config;
pub mod correspondence;
pub mod denoiser;
pub mod error;
pub mod field;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod noise;

pub use error::{Error, Result};
