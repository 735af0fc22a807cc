//! Oscillator models written as `d/dt q(x) + f(x) = 0` and their linearization.
//!
//! Linearizing along a trajectory gives the time-varying matrices
//! `C(t) = dq/dx` and `G(t) = df/dx` that drive both the implicit integrator
//! and the fundamental-matrix propagation.

use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Ordered, validated map of model parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterSet {
    model: String,
    values: IndexMap<String, f64>,
}

impl ParameterSet {
    pub fn new(model: &str, defaults: &[(&str, f64)]) -> Self {
        Self {
            model: model.to_string(),
            values: defaults
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
        }
    }

    /// Returns a copy with `overrides` applied. Unknown names and non-finite
    /// values are rejected.
    pub fn with_overrides(&self, overrides: &[(String, f64)]) -> Result<Self> {
        let mut out = self.clone();
        for (name, value) in overrides {
            let slot = out
                .values
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParameter {
                    model: self.model.clone(),
                    name: name.clone(),
                })?;
            if !value.is_finite() {
                return Err(Error::InvalidParameter {
                    name: name.clone(),
                    value: *value,
                    reason: "value must be finite".into(),
                });
            }
            *slot = *value;
        }
        Ok(out)
    }

    /// Looks up a parameter. Panics on a name the model never declared, which
    /// is a programming error inside the model itself.
    pub fn get(&self, name: &str) -> f64 {
        match self.values.get(name) {
            Some(v) => *v,
            None => panic!("model {} has no parameter {name}", self.model),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Fails unless `name` is strictly positive.
    pub fn require_positive(&self, name: &str) -> Result<f64> {
        let v = self.get(name);
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Error::InvalidParameter {
                name: name.into(),
                value: v,
                reason: "must be > 0".into(),
            })
        }
    }
}

/// An oscillator described by charge-like `q(x)` and resistive `f(x)` terms.
///
/// Models may supply analytic Jacobians; when they don't, [`DaeSystem`] falls
/// back to central differences.
pub trait Oscillator: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn state_names(&self) -> Vec<String>;
    fn params(&self) -> &ParameterSet;

    fn q(&self, x: &DVector<f64>) -> DVector<f64>;
    fn f(&self, x: &DVector<f64>) -> DVector<f64>;

    fn dq(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    fn df(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    /// Rejects states outside the model's coordinate domain.
    fn check_domain(&self, _x: &DVector<f64>) -> std::result::Result<(), String> {
        Ok(())
    }

    /// Rejects physically meaningless initial conditions.
    fn check_initial(&self, x: &DVector<f64>) -> std::result::Result<(), String> {
        self.check_domain(x)
    }

    /// A geometric constraint `c(x) = 0` the state must satisfy, with its
    /// gradient. Shooting enforces it so that a conserved quantity of the
    /// coordinates cannot drift to a neighbouring member of an orbit family.
    fn constraint(&self, _x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        None
    }

    /// Per-component ranges used for randomized Jacobian checks.
    fn sampling_box(&self) -> Vec<(f64, f64)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMode {
    Analytic,
    FiniteDifference,
}

/// A model together with the Jacobian strategy used to linearize it.
#[derive(Debug, Clone)]
pub struct DaeSystem {
    model: Arc<dyn Oscillator>,
    mode: JacobianMode,
}

impl DaeSystem {
    pub fn new(model: Arc<dyn Oscillator>) -> Self {
        Self {
            model,
            mode: JacobianMode::Analytic,
        }
    }

    pub fn with_jacobian_mode(mut self, mode: JacobianMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn jacobian_mode(&self) -> JacobianMode {
        self.mode
    }

    pub fn model(&self) -> &dyn Oscillator {
        self.model.as_ref()
    }

    pub fn name(&self) -> &str {
        self.model.name()
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn state_names(&self) -> Vec<String> {
        self.model.state_names()
    }

    pub fn params(&self) -> &ParameterSet {
        self.model.params()
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "state has length {}, model {} expects {}",
                x.len(),
                self.name(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(self.domain_error(x, "non-finite state"));
        }
        self.model
            .check_domain(x)
            .map_err(|reason| self.domain_error(x, &reason))
    }

    fn domain_error(&self, x: &DVector<f64>, reason: &str) -> Error {
        Error::ModelDomain {
            state: x.iter().copied().collect(),
            reason: reason.to_string(),
        }
    }

    /// Validates an initial condition (length, finiteness, model domain).
    pub fn check_initial(&self, x: &DVector<f64>) -> Result<()> {
        self.check_input(x)?;
        self.model
            .check_initial(x)
            .map_err(|reason| self.domain_error(x, &reason))
    }

    pub fn q(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        let q = self.model.q(x);
        self.finite_vec(x, q, "q")
    }

    pub fn f(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        let f = self.model.f(x);
        self.finite_vec(x, f, "f")
    }

    fn finite_vec(&self, x: &DVector<f64>, v: DVector<f64>, what: &str) -> Result<DVector<f64>> {
        if v.iter().all(|e| e.is_finite()) {
            Ok(v)
        } else {
            Err(self.domain_error(x, &format!("non-finite {what} evaluation")))
        }
    }

    fn finite_mat(&self, x: &DVector<f64>, m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "{what} Jacobian has shape {}x{}, expected {n}x{n}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().all(|e| e.is_finite()) {
            Ok(m)
        } else {
            Err(self.domain_error(x, &format!("non-finite {what} Jacobian")))
        }
    }

    /// `(C, G) = (dq/dx, df/dx)` at `x`.
    pub fn jacobians(&self, x: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_input(x)?;
        let analytic = self.mode == JacobianMode::Analytic;
        let c = match self.model.dq(x).filter(|_| analytic) {
            Some(c) => c,
            None => self.central_difference(x, |m, y| m.q(y))?,
        };
        let g = match self.model.df(x).filter(|_| analytic) {
            Some(g) => g,
            None => self.central_difference(x, |m, y| m.f(y))?,
        };
        Ok((self.finite_mat(x, c, "q")?, self.finite_mat(x, g, "f")?))
    }

    /// Central differences with step `max(1e-8, 1e-7 |x_j|)`.
    pub fn central_difference<F>(&self, x: &DVector<f64>, eval: F) -> Result<DMatrix<f64>>
    where
        F: Fn(&dyn Oscillator, &DVector<f64>) -> DVector<f64>,
    {
        let n = self.dim();
        let mut jac = DMatrix::zeros(n, n);
        let mut xp = x.clone();
        for j in 0..n {
            let h = (1e-7 * x[j].abs()).max(1e-8);
            xp[j] = x[j] + h;
            let plus = eval(self.model.as_ref(), &xp);
            xp[j] = x[j] - h;
            let minus = eval(self.model.as_ref(), &xp);
            xp[j] = x[j];
            let h2 = (x[j] + h) - (x[j] - h);
            jac.set_column(j, &((plus - minus) / h2));
        }
        Ok(jac)
    }
}

/// Worst-case disagreement between analytic and finite-difference Jacobians.
#[derive(Debug, Clone, Serialize)]
pub struct JacobianCheck {
    pub samples: usize,
    pub max_rel_error_q: f64,
    pub max_rel_error_f: f64,
    pub worst_state: Vec<f64>,
}

impl JacobianCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.max_rel_error_q.max(self.max_rel_error_f)
    }
}

fn matrix_rel_error(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    let scale = analytic.amax().max(f64::MIN_POSITIVE);
    (analytic - fd).amax() / scale
}

/// Compares analytic Jacobians against central differences at `samples`
/// states drawn uniformly from the model's sampling box. Errors are measured
/// relative to the largest entry of each analytic matrix.
pub fn fd_jacobian_check(system: &DaeSystem, samples: usize, seed: u64) -> Result<JacobianCheck> {
    let analytic = system.clone().with_jacobian_mode(JacobianMode::Analytic);
    let fd = system.clone().with_jacobian_mode(JacobianMode::FiniteDifference);
    let bounds = system.model().sampling_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = JacobianCheck {
        samples,
        max_rel_error_q: 0.0,
        max_rel_error_f: 0.0,
        worst_state: Vec::new(),
    };
    let mut worst = -1.0;
    for _ in 0..samples {
        let x = DVector::from_iterator(
            bounds.len(),
            bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)),
        );
        let (ca, ga) = analytic.jacobians(&x)?;
        let (cf, gf) = fd.jacobians(&x)?;
        let eq = matrix_rel_error(&ca, &cf);
        let ef = matrix_rel_error(&ga, &gf);
        report.max_rel_error_q = report.max_rel_error_q.max(eq);
        report.max_rel_error_f = report.max_rel_error_f.max(ef);
        if eq.max(ef) > worst {
            worst = eq.max(ef);
            report.worst_state = x.iter().copied().collect();
        }
    }
    Ok(report)
}
