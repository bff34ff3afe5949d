//! Robust-stability certification of barrier model predictive controllers
//! under dynamic output-feedback uncertainty, using slope-restricted
//! Zames-Falb multipliers and a KYP linear matrix inequality.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod kyp;
pub mod lti;
pub mod mpc;
pub mod multipliers;
pub mod properties;
pub mod simulate;
pub mod slope;

pub use error::{Error, Result};
