//! Classic and nonlocal-in-time SIR epidemic models.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classic_sir;
pub mod cli_io;
pub mod error;
pub mod nonlocal_time;
pub mod numerics;
pub mod peak_construction;
pub mod s_domain;
pub mod table;
pub mod tau_model;
pub mod tau_scale;

pub use error::{Result, SirError};
