#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bounds;
pub mod decide;
pub mod design;
pub mod error;
pub mod grid;
mod ipm;
pub mod lottery;
pub mod lp;
pub mod mle;
pub mod num;
pub mod simulate;
pub mod utility;

pub use error::{Error, Result};
