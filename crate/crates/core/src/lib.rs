#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod bench;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod netsolve;
pub mod powerflow;
pub mod reduction;
pub mod smallsignal;
pub mod sysmodel;

pub use error::{Error, Result};
