//! End-to-end Q analysis and its JSON report.

use std::io;

use indexmap::IndexMap;
use serde::Serialize;

use crate::error::Result;
use crate::floquet::{analyze, lambda2_power, Exponent, Lambda2Estimate, MonodromyResult, Multiplier, Verdict};
use crate::linalg::angle_deg;
use crate::models::ModelSpec;
use crate::pss::{find_pss, PeriodicSteadyState, PssMode, PssOptions, PssSummary};
use crate::transient::Method;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QOptions {
    pub pss: PssOptions,
    pub mode: PssMode,
    pub unit_tol: f64,
}

impl Default for QOptions {
    fn default() -> Self {
        Self {
            pss: PssOptions::default(),
            mode: PssMode::Auto,
            unit_tol: crate::floquet::DEFAULT_UNIT_TOL,
        }
    }
}

/// How well the computed phase mode matches `dx_s/dt` at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseModeCheck {
    /// `min_k |λ_k - 1|`.
    pub distance_to_one: f64,
    /// Angle between `X(T) v` and `v`, degrees.
    pub image_angle_deg: f64,
    /// Angle between the eigenvector of the multiplier nearest 1 and `v`.
    pub eigenvector_angle_deg: f64,
    /// `|X(T) v - v| / |v|`.
    pub relative_defect: f64,
}

#[derive(Debug, Clone)]
pub struct QRun {
    pub pss: PeriodicSteadyState,
    pub monodromy: MonodromyResult,
    pub power: Option<Lambda2Estimate>,
    pub phase_check: PhaseModeCheck,
    pub warnings: Vec<String>,
}

/// PSS, monodromy matrix, spectrum and Q for one model instance.
pub fn run_q(spec: &ModelSpec, opts: &QOptions) -> Result<QRun> {
    let pss = find_pss(&spec.system, &spec.seed, spec.period_hint, opts.mode, &opts.pss)?;
    let monodromy = analyze(&pss, opts.unit_tol)?;
    let v = pss.phase_vector(&spec.system)?;
    let image = &monodromy.xt * &v;
    let phase_lambda = monodromy.phase_multiplier();
    let eigvec = monodromy.eigenvector_real(phase_lambda)?;
    let phase_check = PhaseModeCheck {
        distance_to_one: (phase_lambda - 1.0).norm(),
        image_angle_deg: angle_deg(&image, &v),
        eigenvector_angle_deg: angle_deg(&eigvec, &v),
        relative_defect: (&image - &v).norm() / v.norm(),
    };
    let mut warnings = pss.warnings.clone();
    let power = if monodromy.q_report.verdict == Verdict::Finite {
        match lambda2_power(&monodromy.xt, &v) {
            Ok(est) => {
                if let Some(w) = &est.warning {
                    warnings.push(w.clone());
                }
                Some(est)
            }
            Err(e) => {
                warnings.push(format!("power-method λ2 unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };
    Ok(QRun {
        pss,
        monodromy,
        power,
        phase_check,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GridInfo {
    pub method: Method,
    pub steps_per_period: usize,
    pub step: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Tolerances {
    pub newton_tol: f64,
    pub pss_tol: f64,
    pub detect_tol: f64,
    pub unit_tol: f64,
    pub condition_limit: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerSummary {
    pub lambda2: Multiplier,
    pub iterations: usize,
    pub separation: f64,
    pub fell_back: bool,
}

/// Machine-readable result of a Q analysis.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub model: String,
    pub params: IndexMap<String, f64>,
    pub period: f64,
    pub multipliers: Vec<Multiplier>,
    pub n_unit: usize,
    pub lambda2_modulus: f64,
    pub lambda2: Option<Multiplier>,
    pub verdict: Verdict,
    pub q: Option<f64>,
    pub q_rounded: Option<i64>,
    pub floquet_exponents: Vec<Exponent>,
    pub lambda2_power: Option<PowerSummary>,
    pub phase_mode: PhaseModeCheck,
    pub pss: PssSummary,
    pub grid: GridInfo,
    pub tolerances: Tolerances,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(spec: &ModelSpec, run: &QRun, opts: &QOptions) -> Self {
        let q = &run.monodromy.q_report;
        Self {
            model: spec.name().to_string(),
            params: spec.params.iter().map(|(k, v)| (k.to_string(), v)).collect(),
            period: run.pss.period,
            multipliers: run.monodromy.multipliers.iter().map(|z| Multiplier::from(*z)).collect(),
            n_unit: q.n_unit,
            lambda2_modulus: q.lambda2_modulus,
            lambda2: q.lambda2,
            verdict: q.verdict,
            q: q.q,
            q_rounded: q.q_rounded(),
            floquet_exponents: q.floquet_exponents.clone(),
            lambda2_power: run.power.as_ref().map(|p| PowerSummary {
                lambda2: p.lambda2.into(),
                iterations: p.iterations,
                separation: p.separation,
                fell_back: p.fell_back,
            }),
            phase_mode: run.phase_check,
            pss: run.pss.summary(),
            grid: GridInfo {
                method: run.pss.method,
                steps_per_period: run.pss.steps(),
                step: run.pss.step(),
            },
            tolerances: Tolerances {
                newton_tol: opts.pss.newton_tol,
                pss_tol: opts.pss.tol,
                detect_tol: opts.pss.detect_tol,
                unit_tol: opts.unit_tol,
                condition_limit: opts.pss.cond_limit,
            },
            warnings: run.warnings.clone(),
        }
    }
}

/// Pretty JSON writer that prints every float with 17 significant digits.
#[derive(Default)]
pub struct Exact17 {
    inner: serde_json::ser::PrettyFormatter<'static>,
}

impl serde_json::ser::Formatter for Exact17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.inner.end_object_value(w)
    }
}

/// Serializes `value` as pretty JSON with 17-significant-digit floats.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Exact17::default());
    value.serialize(&mut ser).expect("in-memory JSON serialization");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_json() {
        let xs = vec![0.1, 1.0 / 3.0, -2.5e-9, 6.02214076e23, f64::MIN_POSITIVE];
        let text = to_json(&xs);
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, xs);
        assert!(text.contains("3.3333333333333331e-1"), "{text}");
    }

    #[test]
    fn non_finite_becomes_null() {
        let text = to_json(&vec![f64::NAN]);
        let back: Vec<Option<f64>> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, vec![None]);
    }
}
