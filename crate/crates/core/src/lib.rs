//! Amplitude-stability analysis of nonlinear oscillators.
//!
//! An oscillator is a DAE `d/dt q(x) + f(x) = 0`. The pipeline finds its
//! periodic steady state, propagates the linearized flow over one period to
//! get the monodromy matrix, and reads the settling factor
//! `Q = ln 0.05 / ln |λ2|` off the second characteristic multiplier.

pub mod analysis;
pub mod dae;
pub mod eigen;
pub mod error;
pub mod floquet;
pub mod linalg;
pub mod models;
pub mod pipeline;
pub mod pss;
pub mod transient;

pub use dae::{DaeSystem, JacobianMode, Oscillator, ParameterSet};
pub use error::{Error, Result};
pub use floquet::{MonodromyResult, QReport, Verdict};
pub use models::{lookup, ModelKind, ModelSpec};
pub use pss::{PeriodicSteadyState, PhaseCondition, PssMode, PssOptions};
pub use transient::{IntegratorConfig, Method, Waveform};
