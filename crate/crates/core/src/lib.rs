//! Hybrid analog/digital beamforming for multi-user mmWave dual-function
//! radar-communication (DFRC) base stations.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] - array geometry, channels and radar scene.
//! * [`metrics`] - sum-rate, MSE, SCNR, beampattern, detection probability,
//!   power and energy efficiency.
//! * [`conic`] - second-order cone programs used by the transmit subproblem.
//! * [`wpdd`] - the penalty-dual-decomposition optimizer for reconfigurable
//!   subarrays and the fully-digital upper bound.
//! * [`pc_variant`] - the persistently-connected (fixed block-diagonal)
//!   adaptation of the optimizer.
//! * [`harness`] - experiment configs, Monte-Carlo sweeps and result files.

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conic;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pc_variant;
pub mod wpdd;

pub use error::{Error, Result};
pub use linalg::{CMat, CVec, C64};
pub use metrics::{Architecture, BeamformerSet, PowerModel};
pub use model::{ChannelSet, PathLossModel, RadarScene, SystemConfig};
