//! Fixed-step implicit integration of `d/dt q(x) + f(x) = 0`.
//!
//! Each step solves
//! `(q(x_{m+1}) - q(x_m)) / h + θ f(x_{m+1}) + (1 - θ) f(x_m) = 0`
//! by Newton's method with iteration matrix `C/h + θ G`, where θ = 1 for
//! backward Euler and θ = 1/2 for the trapezoidal rule.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dae::DaeSystem;
use crate::error::{Error, Result};
use crate::linalg::{factor, inf_norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    BackwardEuler,
    Trapezoidal,
}

impl Method {
    /// Weight of the new-point `f` term.
    pub fn theta(self) -> f64 {
        match self {
            Method::BackwardEuler => 1.0,
            Method::Trapezoidal => 0.5,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "be" | "backward-euler" => Ok(Method::BackwardEuler),
            "trap" | "trapezoidal" => Ok(Method::Trapezoidal),
            other => Err(Error::InvalidArgument(format!(
                "unknown integration method '{other}' (expected trapezoidal or backward-euler)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Nominal step; the actual step is shortened so the grid lands on `t1`.
    pub step: f64,
    /// Newton stops once the correction is below `newton_tol * max(1, |x|_inf)`.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Trapezoidal,
            step: 1e-3,
            newton_tol: 1e-10,
            newton_max_iter: 20,
        }
    }
}

impl IntegratorConfig {
    pub fn new(method: Method, step: f64) -> Self {
        Self {
            method,
            step,
            ..Self::default()
        }
    }

    /// Step chosen so that one `period` takes `steps` steps.
    pub fn per_period(method: Method, period: f64, steps: usize) -> Self {
        Self::new(method, period / steps as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!("step must be > 0, got {}", self.step)));
        }
        if !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(Error::InvalidArgument("Newton tolerance and iteration limit must be positive".into()));
        }
        Ok(())
    }
}

/// Sampled time series produced by [`integrate`].
#[derive(Debug, Clone)]
pub struct Waveform {
    pub model: String,
    pub state_names: Vec<String>,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Waveform {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("waveform is never empty")
    }

    pub fn component(&self, j: usize) -> Vec<f64> {
        self.states.iter().map(|x| x[j]).collect()
    }

    /// Writes `t,<state names>` followed by one row per sample at 17
    /// significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,{}", self.state_names.join(","))?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(out, "{}", fmt17(*t))?;
            for v in x.iter() {
                write!(out, ",{}", fmt17(*v))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Result of one accepted step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub x: DVector<f64>,
    pub q: DVector<f64>,
    pub f: DVector<f64>,
    pub iterations: usize,
    /// Scaled size of the final Newton correction.
    pub residual: f64,
}

/// Stateless single-step solver.
#[derive(Debug, Clone, Copy)]
pub struct Stepper<'a> {
    pub system: &'a DaeSystem,
    pub cfg: IntegratorConfig,
}

impl<'a> Stepper<'a> {
    pub fn new(system: &'a DaeSystem, cfg: IntegratorConfig) -> Self {
        Self { system, cfg }
    }

    /// Advances from `x_prev` (with cached `q_prev`, `f_prev`) by `h`.
    pub fn step(
        &self,
        t: f64,
        h: f64,
        x_prev: &DVector<f64>,
        q_prev: &DVector<f64>,
        f_prev: &DVector<f64>,
    ) -> Result<StepResult> {
        let theta = self.cfg.method.theta();
        let mut x = x_prev.clone();
        let mut residual = f64::INFINITY;
        for it in 1..=self.cfg.newton_max_iter {
            let q = self.system.q(&x)?;
            let f = self.system.f(&x)?;
            let r = (&q - q_prev) / h + &f * theta + f_prev * (1.0 - theta);
            let (c, g) = self.system.jacobians(&x)?;
            let lu = factor(c / h + g * theta).ok_or(Error::Singular {
                context: "transient Newton iteration",
                step: None,
            })?;
            let dx = lu.solve(&r).ok_or(Error::Singular {
                context: "transient Newton iteration",
                step: None,
            })?;
            x -= &dx;
            let scale = inf_norm(&x).max(1.0);
            residual = inf_norm(&dx) / scale;
            if !residual.is_finite() {
                break;
            }
            if residual <= self.cfg.newton_tol {
                let q = self.system.q(&x)?;
                let f = self.system.f(&x)?;
                return Ok(StepResult {
                    x,
                    q,
                    f,
                    iterations: it,
                    residual,
                });
            }
        }
        Err(Error::StepFailure {
            time: t + h,
            iterations: self.cfg.newton_max_iter,
            residual,
            iterate: x.iter().copied().collect(),
        })
    }
}

/// Uniform-grid trajectory, optionally carrying `C`/`G` at every grid point.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub c_table: Vec<DMatrix<f64>>,
    pub g_table: Vec<DMatrix<f64>>,
    pub max_residual: f64,
}

/// Integrates `nsteps` uniform steps of size `h` from `(t0, x0)`.
pub fn integrate_steps(
    system: &DaeSystem,
    x0: &DVector<f64>,
    t0: f64,
    h: f64,
    nsteps: usize,
    cfg: &IntegratorConfig,
    keep_jacobians: bool,
) -> Result<Trajectory> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {h}")));
    }
    system.check_initial(x0)?;
    let stepper = Stepper::new(system, *cfg);
    let mut traj = Trajectory {
        times: Vec::with_capacity(nsteps + 1),
        states: Vec::with_capacity(nsteps + 1),
        c_table: Vec::new(),
        g_table: Vec::new(),
        max_residual: 0.0,
    };
    let mut x = x0.clone();
    let mut q = system.q(&x)?;
    let mut f = system.f(&x)?;
    traj.times.push(t0);
    traj.states.push(x.clone());
    if keep_jacobians {
        let (c, g) = system.jacobians(&x)?;
        traj.c_table.push(c);
        traj.g_table.push(g);
    }
    for m in 0..nsteps {
        let t = t0 + m as f64 * h;
        let s = stepper.step(t, h, &x, &q, &f)?;
        traj.max_residual = traj.max_residual.max(s.residual);
        x = s.x;
        q = s.q;
        f = s.f;
        traj.times.push(t0 + (m + 1) as f64 * h);
        traj.states.push(x.clone());
        if keep_jacobians {
            let (c, g) = system.jacobians(&x)?;
            traj.c_table.push(c);
            traj.g_table.push(g);
        }
    }
    Ok(traj)
}

/// Number of uniform steps covering `span` with steps no longer than `h`.
pub fn step_count(span: f64, h: f64) -> usize {
    ((span / h) - 1e-9).ceil().max(1.0) as usize
}

/// Integrates from `t0` to `t1` on a uniform grid whose step does not
/// exceed `cfg.step`.
pub fn integrate(
    system: &DaeSystem,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Waveform> {
    cfg.validate()?;
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!("t1 ({t1}) must exceed t0 ({t0})")));
    }
    let n = step_count(t1 - t0, cfg.step);
    let h = (t1 - t0) / n as f64;
    let traj = integrate_steps(system, x0, t0, h, n, cfg, false)?;
    let mut times = traj.times;
    *times.last_mut().expect("non-empty") = t1;
    Ok(Waveform {
        model: system.name().to_string(),
        state_names: system.state_names(),
        times,
        states: traj.states,
    })
}

/// `dx/dt = -C(x)^{-1} f(x)`.
pub fn state_derivative(system: &DaeSystem, x: &DVector<f64>) -> Result<DVector<f64>> {
    let (c, _) = system.jacobians(x)?;
    let f = system.f(x)?;
    let lu = factor(c).ok_or(Error::Singular {
        context: "dq/dx (state derivative)",
        step: None,
    })?;
    lu.solve(&(-f)).ok_or(Error::Singular {
        context: "dq/dx (state derivative)",
        step: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    #[test]
    fn chemical_sum_is_conserved_by_both_methods() {
        let sys = models::build_chemical(1.0).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 0.3, 0.2]);
        for method in [Method::Trapezoidal, Method::BackwardEuler] {
            let cfg = IntegratorConfig::new(method, 0.01);
            let w = integrate(&sys, &x0, 0.0, 30.0, &cfg).unwrap();
            for x in &w.states {
                assert!((x.sum() - 1.5).abs() < 1e-10, "{method:?}: sum {}", x.sum());
            }
        }
    }

    #[test]
    fn grid_ends_exactly_at_t1() {
        let sys = models::build_chemical(1.0).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 0.3, 0.2]);
        let w = integrate(&sys, &x0, 0.0, 1.0, &IntegratorConfig::new(Method::Trapezoidal, 0.3)).unwrap();
        assert_eq!(w.len(), 5);
        assert_eq!(*w.times.last().unwrap(), 1.0);
        assert!(w.times.windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn rejects_bad_interval_and_step() {
        let sys = models::build_chemical(1.0).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 0.3, 0.2]);
        let cfg = IntegratorConfig::default();
        assert!(integrate(&sys, &x0, 1.0, 1.0, &cfg).is_err());
        let bad = IntegratorConfig::new(Method::Trapezoidal, -1.0);
        assert!(integrate(&sys, &x0, 0.0, 1.0, &bad).is_err());
    }

    #[test]
    fn csv_header_and_precision() {
        let w = Waveform {
            model: "m".into(),
            state_names: vec!["a".into(), "b".into()],
            times: vec![0.0, 0.1],
            states: vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![1.0 / 3.0, 2.0])],
        };
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "t,a,b");
        lines.next();
        let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[1], 1.0 / 3.0);
    }
}
