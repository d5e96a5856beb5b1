//! Local approximate Gaussian-process emulation for large computer experiments.
//!
//! For each predictive location a small sub-design is grown greedily from a
//! nearest-neighbour seed (by nearest neighbours, active-learning Cohn
//! variance reduction, or a mean-squared-prediction-error criterion), with
//! every quantity updated in O(j^2) per step. Locations are independent, so
//! a global predictor is an embarrassingly parallel loop over them.

pub mod bench;
pub mod design;
pub mod error;
pub mod global;
pub mod gp;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod local;

pub use design::DesignSet;
pub use error::{Error, Result};
pub use gp::{GpFit, Prediction};
pub use global::{emulate, GlobalResult, StageConfig};
pub use kernel::Hyper;
pub use local::Criterion;
