//! Zonal Volt/VAR control for unbalanced radial distribution feeders.
//!
//! The crate loads a feeder, solves its three-phase power flow, derives the
//! voltage-to-reactive-power sensitivity matrix, groups phase nodes into
//! control zones, and runs either the local zonal controller or a centralized
//! LP benchmark over a quasi-static time series.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod cvvc;
pub mod error;
pub mod feeder;
pub mod lp;
pub mod matrix;
pub mod powerflow;
pub mod profiles;
pub mod qsts;
pub mod scenario;
pub mod sensitivity;
pub mod zoning;

pub use error::{Error, Result};
pub use feeder::{load_feeder, FeederModel, Phase, PhaseNode};
pub use matrix::Matrix;
pub use sensitivity::SensitivityBundle;
pub use zoning::ZonePartition;
