//! Numerical model of a frequency-bin quantum frequency processor.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bessel;
pub mod biphoton;
pub mod calib;
pub mod eom;
pub mod error;
pub mod lattice;
pub mod operator;
pub mod optim;
pub mod qfp;
pub mod rings;
pub mod tomo;

pub use biphoton::{BiphotonState, JointAmplitude};
pub use calib::{AlignmentResult, PhaseCalibration};
pub use eom::RfDrive;
pub use error::{Error, Result};
pub use lattice::{make_lattice, FrequencyLattice};
pub use operator::{unitarity_deficit, ModeOperator};
pub use qfp::ProcessorConfig;
pub use rings::{RingParams, WsUnitConfig};
pub use tomo::{DensityMatrix, MeasurementRecord};
