//! Tempered Feynman-Kac models, an exact finite-state oracle for them, a
//! particle sampler, and experiments probing its stability as the number of
//! tempering steps grows.

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod drift;
pub mod error;
pub mod fixtures;
pub mod fk;
pub mod lab;
pub mod matrix;
pub mod measure;
pub mod oracle;
pub mod particles;
pub mod rng;
pub mod rwm;
pub mod tempering;

pub use drift::{DriftSpec, Minorizer};
pub use error::{Error, Result};
pub use fk::{FKModel, FlowIndex, InitialDistribution, KernelFamily, PotentialFamily};
pub use matrix::Matrix;
pub use measure::DiscreteMeasure;
pub use oracle::FiniteModel;
pub use particles::{EmpiricalMeasure, Ensemble};
pub use rng::{StreamKey, StreamRng};
pub use rwm::IncrementDistribution;
pub use tempering::{LogTarget, TemperedFamily, TemperingSchedule};
