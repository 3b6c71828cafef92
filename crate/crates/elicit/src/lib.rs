//! Files, experiments, plots, command line and HTTP service around
//! [`elicit_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bench;
pub mod error;
pub mod io;
pub mod plot;
pub mod service;

pub use error::{AppError, Result};
