//! Evolutionary risk potential field (ERPF) model predictive control.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`]: point-mass vehicle model, references and stacked prediction matrices.
//! * [`risk_field`]: classical repulsive field, distance history and the evolution factor.
//! * [`risk_ellipse`]: TTC/TWH collision ellipses and the exponential risk metric.
//! * [`mpc`]: quadratic tracking cost, full objective and the projected-gradient solver.
//! * [`sim`]: closed-loop scenarios, baselines, metrics, Monte Carlo and FLOP accounting.
//! * [`io`]: run configuration, exports, field grids and trajectory replay.

// `!(x > 0.0)` style guards are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod flops;
pub mod io;
pub mod mpc;
pub mod risk_ellipse;
pub mod risk_field;
pub mod sim;

pub use error::{Error, Result};
