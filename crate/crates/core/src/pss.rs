//! Periodic steady state: Newton shooting for dissipative oscillators and
//! section-crossing period detection for conservative ones.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dae::DaeSystem;
use crate::error::{Error, Result};
use crate::floquet::propagate;
use crate::transient::{integrate_steps, state_derivative, IntegratorConfig, Method, Stepper, Trajectory, Waveform};

/// Fixed-component section `x[anchor_index] = anchor_value`, crossed upward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseCondition {
    pub anchor_index: usize,
    pub anchor_value: f64,
}

impl PhaseCondition {
    /// Anchors the component with the largest swing at its time average.
    pub fn auto(states: &[DVector<f64>]) -> Result<Self> {
        let n = states.first().map(|x| x.len()).unwrap_or(0);
        if n == 0 || states.len() < 3 {
            return Err(Error::InvalidArgument("need a waveform to choose a phase condition".into()));
        }
        let mut best = (0usize, -1.0);
        for j in 0..n {
            let (lo, hi) = states
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x[j]), hi.max(x[j])));
            if hi - lo > best.1 {
                best = (j, hi - lo);
            }
        }
        let j = best.0;
        let mean = states.iter().map(|x| x[j]).sum::<f64>() / states.len() as f64;
        Ok(Self {
            anchor_index: j,
            anchor_value: mean,
        })
    }
}

/// A level set `x[index] = value` crossed in one direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Section {
    pub index: usize,
    pub value: f64,
    pub rising: bool,
}

impl Section {
    /// Signed distance, negative before the crossing and positive after.
    pub fn gap(&self, x: &DVector<f64>) -> f64 {
        let d = x[self.index] - self.value;
        if self.rising {
            d
        } else {
            -d
        }
    }
}

impl From<PhaseCondition> for Section {
    fn from(p: PhaseCondition) -> Self {
        Self {
            index: p.anchor_index,
            value: p.anchor_value,
            rising: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PssOptions {
    pub method: Method,
    pub steps_per_period: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Closure tolerance for shooting, relative to orbit amplitude.
    pub tol: f64,
    pub max_shooting_iter: usize,
    /// Closure tolerance accepted from period detection.
    pub detect_tol: f64,
    /// Shooting-Jacobian condition number that marks a degenerate orbit.
    pub cond_limit: f64,
    pub warmup_periods: f64,
    /// How many period hints to search for crossings after warmup.
    pub search_periods: f64,
    /// Relative inter-crossing drift that triggers a warning.
    pub drift_tol: f64,
}

impl Default for PssOptions {
    fn default() -> Self {
        Self {
            method: Method::Trapezoidal,
            steps_per_period: 2000,
            newton_tol: 1e-10,
            newton_max_iter: 20,
            tol: 1e-8,
            max_shooting_iter: 40,
            detect_tol: 1e-5,
            cond_limit: 1e12,
            warmup_periods: 20.0,
            search_periods: 30.0,
            drift_tol: 1e-3,
        }
    }
}

impl PssOptions {
    pub fn integrator(&self, step: f64) -> IntegratorConfig {
        IntegratorConfig {
            method: self.method,
            step,
            newton_tol: self.newton_tol,
            newton_max_iter: self.newton_max_iter,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps_per_period < 4 {
            return Err(Error::InvalidArgument("steps_per_period must be at least 4".into()));
        }
        if !(self.tol > 0.0 && self.detect_tol > 0.0) {
            return Err(Error::InvalidArgument("PSS tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PssSource {
    Shooting,
    PeriodDetection,
}

/// One period of the steady state on a uniform grid, with `C`/`G` tabulated
/// at every grid point.
#[derive(Debug, Clone)]
pub struct PeriodicSteadyState {
    pub model: String,
    pub state_names: Vec<String>,
    pub period: f64,
    pub method: Method,
    pub times: Vec<f64>,
    pub samples: Vec<DVector<f64>>,
    pub c_table: Vec<DMatrix<f64>>,
    pub g_table: Vec<DMatrix<f64>>,
    /// `|x(T) - x(0)|_inf / amplitude`.
    pub closure_residual: f64,
    /// Largest peak-to-peak swing over the components.
    pub amplitude: f64,
    pub phase: PhaseCondition,
    pub source: PssSource,
    pub iterations: usize,
    /// Shooting-Jacobian condition estimate at the last Newton step.
    pub condition: Option<f64>,
    pub warnings: Vec<String>,
}

impl PeriodicSteadyState {
    pub fn steps(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn step(&self) -> f64 {
        self.period / self.steps() as f64
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.samples[0]
    }

    /// `dx_s/dt` at `t = 0`, the phase-mode direction.
    pub fn phase_vector(&self, system: &DaeSystem) -> Result<DVector<f64>> {
        state_derivative(system, self.x0())
    }

    pub fn waveform(&self) -> Waveform {
        Waveform {
            model: self.model.clone(),
            state_names: self.state_names.clone(),
            times: self.times.clone(),
            states: self.samples.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.waveform().write_csv(out)
    }

    pub fn summary(&self) -> PssSummary {
        PssSummary {
            period: self.period,
            closure_residual: self.closure_residual,
            grid_points: self.samples.len(),
            amplitude: self.amplitude,
            source: self.source,
            iterations: self.iterations,
            phase: self.phase,
            x0: self.x0().iter().copied().collect(),
            warnings: self.warnings.clone(),
        }
    }

    fn from_trajectory(
        system: &DaeSystem,
        traj: Trajectory,
        period: f64,
        method: Method,
        phase: PhaseCondition,
        source: PssSource,
    ) -> Self {
        let amplitude = swing(&traj.states);
        let x0 = &traj.states[0];
        let closure = (traj.states.last().expect("non-empty") - x0).amax() / amplitude.max(f64::MIN_POSITIVE);
        Self {
            model: system.name().to_string(),
            state_names: system.state_names(),
            period,
            method,
            times: traj.times,
            samples: traj.states,
            c_table: traj.c_table,
            g_table: traj.g_table,
            closure_residual: closure,
            amplitude,
            phase,
            source,
            iterations: 0,
            condition: None,
            warnings: Vec::new(),
        }
    }
}

/// Serializable PSS summary.
#[derive(Debug, Clone, Serialize)]
pub struct PssSummary {
    pub period: f64,
    pub closure_residual: f64,
    pub grid_points: usize,
    pub amplitude: f64,
    pub source: PssSource,
    pub iterations: usize,
    pub phase: PhaseCondition,
    pub x0: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Largest peak-to-peak excursion over all components.
pub fn swing(states: &[DVector<f64>]) -> f64 {
    let n = states.first().map(|x| x.len()).unwrap_or(0);
    (0..n)
        .map(|j| {
            let (lo, hi) = states
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x[j]), hi.max(x[j])));
            hi - lo
        })
        .fold(0.0, f64::max)
}

fn constant_floor(x0: &DVector<f64>) -> f64 {
    1e-6 * x0.amax().max(1.0)
}

/// Newton shooting on `[φ_T(x0) - x0; x0[j] - c] = 0` over `(x0, T)`.
///
/// The state block of the Jacobian is the discrete monodromy matrix of the
/// integration grid; the period column is `dx/dt` at the end point. A model
/// constraint, when present, adds one more row.
pub fn shoot(
    system: &DaeSystem,
    x0_guess: &DVector<f64>,
    t_guess: f64,
    phase: PhaseCondition,
    opts: &PssOptions,
) -> Result<PeriodicSteadyState> {
    opts.validate()?;
    if !(t_guess > 0.0 && t_guess.is_finite()) {
        return Err(Error::InvalidArgument(format!("period guess must be > 0, got {t_guess}")));
    }
    let n = system.dim();
    if phase.anchor_index >= n {
        return Err(Error::InvalidArgument("phase anchor index out of range".into()));
    }
    let nsteps = opts.steps_per_period;
    let mut x0 = x0_guess.clone();
    x0[phase.anchor_index] = phase.anchor_value;
    let mut period = t_guess;
    let mut last_residual = f64::INFINITY;

    for iter in 0..opts.max_shooting_iter {
        let h = period / nsteps as f64;
        let cfg = opts.integrator(h);
        let traj = integrate_steps(system, &x0, 0.0, h, nsteps, &cfg, true)?;
        let amplitude = swing(&traj.states);
        if amplitude <= constant_floor(&x0) {
            return Err(Error::ConstantSolution);
        }
        let x_end = traj.states.last().expect("non-empty").clone();
        let r = &x_end - &x0;
        last_residual = r.amax() / amplitude;

        let monodromy = propagate(&traj.c_table, &traj.g_table, h, opts.method)?;
        let xdot = state_derivative(system, &x_end)?;

        // bordered Jacobian, scaled by per-component swing and by T
        let scales: Vec<f64> = (0..n)
            .map(|j| {
                let (lo, hi) = traj
                    .states
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x[j]), hi.max(x[j])));
                (hi - lo).max(1e-3 * amplitude)
            })
            .collect();
        let constraint = system.model().constraint(&x0);
        let rows = n + 1 + usize::from(constraint.is_some());
        let mut jac = DMatrix::zeros(rows, n + 1);
        for i in 0..n {
            for k in 0..n {
                let delta = if i == k { 1.0 } else { 0.0 };
                jac[(i, k)] = (monodromy[(i, k)] - delta) * scales[k] / scales[i];
            }
            jac[(i, n)] = xdot[i] * period / scales[i];
        }
        jac[(n, phase.anchor_index)] = 1.0;
        if let Some((_, grad)) = &constraint {
            for k in 0..n {
                jac[(n + 1, k)] = grad[k] * scales[k];
            }
        }
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if condition > opts.cond_limit {
            return Err(Error::DegenerateOrbit { condition });
        }

        if last_residual <= opts.tol {
            let mut pss = PeriodicSteadyState::from_trajectory(
                system,
                traj,
                period,
                opts.method,
                phase,
                PssSource::Shooting,
            );
            pss.iterations = iter;
            pss.condition = Some(condition);
            return Ok(pss);
        }

        let mut rhs = DVector::zeros(rows);
        for i in 0..n {
            rhs[i] = -r[i] / scales[i];
        }
        rhs[n] = -(x0[phase.anchor_index] - phase.anchor_value);
        if let Some((c, _)) = constraint {
            rhs[n + 1] = -c;
        }
        // least squares: with a constraint row the system is overdetermined
        // by the integrator's small drift of the constrained quantity
        let y = svd.solve(&rhs, f64::EPSILON * smax).map_err(|_| Error::Singular {
            context: "shooting Jacobian",
            step: None,
        })?;
        for k in 0..n {
            x0[k] += y[k] * scales[k];
        }
        // keep the period positive and the step bounded
        let dt = (y[n] * period).clamp(-0.5 * period, 0.5 * period);
        period += dt;
        if !x0.iter().all(|v| v.is_finite()) || !period.is_finite() {
            break;
        }
    }
    Err(Error::ShootingDivergence {
        iterations: opts.max_shooting_iter,
        residual: last_residual,
    })
}

/// A refined section crossing.
#[derive(Debug, Clone)]
pub struct Crossing {
    pub time: f64,
    pub state: DVector<f64>,
}

/// Locates the crossing of `section` between grid states `x_m` (before) and
/// `x_{m+1}` (at or after). The crossing time comes from linear
/// interpolation refined by secant steps, and the state is produced by a
/// partial integrator step from `x_m` so it stays on the discrete flow.
pub fn refine_crossing(
    system: &DaeSystem,
    cfg: &IntegratorConfig,
    t_m: f64,
    x_m: &DVector<f64>,
    x_next: &DVector<f64>,
    h: f64,
    section: &Section,
) -> Result<Crossing> {
    let stepper = Stepper::new(system, *cfg);
    let q_m = system.q(x_m)?;
    let f_m = system.f(x_m)?;
    let g0 = section.gap(x_m);
    let g1 = section.gap(x_next);
    let advance = |d: f64| -> Result<DVector<f64>> {
        if d <= 0.0 {
            Ok(x_m.clone())
        } else {
            Ok(stepper.step(t_m, d, x_m, &q_m, &f_m)?.x)
        }
    };
    let (mut da, mut ga) = (0.0, g0);
    let (mut db, mut gb) = (h, g1);
    let mut d = if g1 != g0 { h * (-g0) / (g1 - g0) } else { 0.5 * h };
    let mut state = advance(d)?;
    let scale = (g1 - g0).abs().max(f64::MIN_POSITIVE);
    for _ in 0..6 {
        let g = section.gap(&state);
        if g.abs() <= 1e-14 * scale {
            break;
        }
        if g < 0.0 {
            da = d;
            ga = g;
        } else {
            db = d;
            gb = g;
        }
        let next = if gb != ga { da + (db - da) * (-ga) / (gb - ga) } else { 0.5 * (da + db) };
        if (next - d).abs() <= 1e-15 * h {
            break;
        }
        d = next;
        state = advance(d)?;
    }
    Ok(Crossing { time: t_m + d, state })
}

/// Scans a uniform trajectory for crossings of `section`.
pub fn find_crossings(
    system: &DaeSystem,
    cfg: &IntegratorConfig,
    traj: &Trajectory,
    section: &Section,
) -> Result<Vec<Crossing>> {
    let mut out = Vec::new();
    for m in 0..traj.states.len().saturating_sub(1) {
        let (a, b) = (&traj.states[m], &traj.states[m + 1]);
        if section.gap(a) < 0.0 && section.gap(b) >= 0.0 {
            let h = traj.times[m + 1] - traj.times[m];
            out.push(refine_crossing(system, cfg, traj.times[m], a, b, h, section)?);
        }
    }
    Ok(out)
}

/// Period from consecutive upward crossings after a warmup transient.
///
/// `period_hint` sets the step (`period_hint / steps_per_period`) and the
/// search window. The returned orbit is re-integrated over one detected
/// period on the uniform analysis grid.
pub fn detect_period(
    system: &DaeSystem,
    x0: &DVector<f64>,
    warmup: f64,
    section: PhaseCondition,
    period_hint: f64,
    opts: &PssOptions,
) -> Result<PeriodicSteadyState> {
    opts.validate()?;
    if !(period_hint > 0.0) || warmup < 0.0 {
        return Err(Error::InvalidArgument("period hint must be > 0 and warmup >= 0".into()));
    }
    if section.anchor_index >= system.dim() {
        return Err(Error::InvalidArgument("section index out of range".into()));
    }
    let h = period_hint / opts.steps_per_period as f64;
    let cfg = opts.integrator(h);
    let mut x = x0.clone();
    let mut t = 0.0;
    if warmup > 0.0 {
        let n = (warmup / h).ceil() as usize;
        let w = integrate_steps(system, &x, 0.0, h, n, &cfg, false)?;
        x = w.states.last().expect("non-empty").clone();
        t = *w.times.last().expect("non-empty");
    }

    // integrate one hint at a time until three crossings are seen
    let mut crossings: Vec<Crossing> = Vec::new();
    let chunks = opts.search_periods.ceil().max(2.0) as usize;
    for _ in 0..chunks {
        let seg = integrate_steps(system, &x, t, h, opts.steps_per_period, &cfg, false)?;
        crossings.extend(find_crossings(system, &cfg, &seg, &section.into())?);
        x = seg.states.last().expect("non-empty").clone();
        t = *seg.times.last().expect("non-empty");
        if crossings.len() >= 3 {
            break;
        }
    }
    if crossings.len() < 2 {
        return Err(Error::NoOscillation(format!(
            "found {} upward crossing(s) of x[{}] = {} in the search window",
            crossings.len(),
            section.anchor_index,
            section.anchor_value
        )));
    }
    let k = crossings.len() - 1;
    let period = crossings[k].time - crossings[k - 1].time;
    let mut warnings = Vec::new();
    if k >= 2 {
        let prev = crossings[k - 1].time - crossings[k - 2].time;
        let drift = (period - prev).abs() / period;
        if drift > opts.drift_tol {
            warnings.push(format!("inter-crossing period drifts by {:.3e} (relative)", drift));
        }
    }
    let start = crossings[k - 1].state.clone();
    let n = opts.steps_per_period;
    let hp = period / n as f64;
    let traj = integrate_steps(system, &start, 0.0, hp, n, &opts.integrator(hp), true)?;
    if swing(&traj.states) <= constant_floor(&start) {
        return Err(Error::ConstantSolution);
    }
    let mut pss =
        PeriodicSteadyState::from_trajectory(system, traj, period, opts.method, section, PssSource::PeriodDetection);
    if pss.closure_residual > opts.detect_tol {
        warnings.push(format!(
            "closure residual {:.3e} exceeds detection tolerance {:.1e}",
            pss.closure_residual, opts.detect_tol
        ));
    }
    pss.warnings = warnings;
    Ok(pss)
}

/// How the periodic steady state is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PssMode {
    /// Shooting, falling back to period detection on a degenerate orbit.
    Auto,
    Shoot,
    Detect,
}

impl PssMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(PssMode::Auto),
            "shoot" => Ok(PssMode::Shoot),
            "detect" => Ok(PssMode::Detect),
            other => Err(Error::InvalidArgument(format!(
                "unknown PSS mode '{other}' (expected auto, shoot or detect)"
            ))),
        }
    }
}

/// Warmup from `seed`, automatic phase condition, then shooting and/or
/// period detection according to `mode`.
pub fn find_pss(
    system: &DaeSystem,
    seed: &DVector<f64>,
    period_hint: f64,
    mode: PssMode,
    opts: &PssOptions,
) -> Result<PeriodicSteadyState> {
    opts.validate()?;
    let h = period_hint / opts.steps_per_period as f64;
    let cfg = opts.integrator(h);
    let warm_steps = (opts.warmup_periods * opts.steps_per_period as f64).ceil() as usize;
    let warm = integrate_steps(system, seed, 0.0, h, warm_steps.max(2 * opts.steps_per_period), &cfg, false)?;
    let tail_start = warm.states.len().saturating_sub(2 * opts.steps_per_period);
    let phase = PhaseCondition::auto(&warm.states[tail_start..])?;
    let x_warm = warm.states.last().expect("non-empty").clone();
    let detected = detect_period(system, &x_warm, 0.0, phase, period_hint, opts)?;
    match mode {
        PssMode::Detect => Ok(detected),
        PssMode::Shoot => shoot(system, detected.x0(), detected.period, phase, opts),
        PssMode::Auto => match shoot(system, detected.x0(), detected.period, phase, opts) {
            Ok(p) => Ok(p),
            Err(Error::DegenerateOrbit { condition }) => {
                let mut p = detected;
                p.condition = Some(condition);
                p.warnings.push(format!(
                    "shooting Jacobian near-singular (condition {condition:.2e}); used period detection"
                ));
                Ok(p)
            }
            Err(e) => Err(e),
        },
    }
}
