//! Monodromy matrix, characteristic multipliers and the amplitude Q factor.
//!
//! Perturbations of a periodic steady state obey the periodically
//! time-varying linear system `d/dt (C(t) y) + G(t) y = 0`. Its fundamental
//! matrix at one period, `X(T)`, has one multiplier at 1 (the phase mode);
//! the next largest multiplier `λ2` sets how fast amplitude deviations die
//! out, and `Q = ln 0.05 / ln |λ2|` is the number of cycles needed to shrink
//! such a deviation to 5 %.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::eigen::{eigen_spectrum, eigenvector, C64};
use crate::error::{Error, Result};
use crate::linalg::factor;
use crate::pss::PeriodicSteadyState;
use crate::transient::Method;

/// Amplitude fraction that defines settling.
pub const SETTLE_FRACTION: f64 = 0.05;

/// Default tolerance for classifying `|λ| ≈ 1`.
pub const DEFAULT_UNIT_TOL: f64 = 1e-4;

/// Propagates `X_0 = I` through the discrete linearized scheme using
/// tabulated `C_m`, `G_m` on a uniform grid of step `h`:
/// `(C_{m+1}/h + θ G_{m+1}) X_{m+1} = (C_m/h - (1-θ) G_m) X_m`.
pub fn propagate(
    c_table: &[DMatrix<f64>],
    g_table: &[DMatrix<f64>],
    h: f64,
    method: Method,
) -> Result<DMatrix<f64>> {
    let n = c_table.first().map(|c| c.nrows()).unwrap_or(0);
    let theta = method.theta();
    let mut x = DMatrix::<f64>::identity(n, n);
    for m in 0..c_table.len().saturating_sub(1) {
        let lhs = &c_table[m + 1] / h + &g_table[m + 1] * theta;
        let rhs = (&c_table[m] / h - &g_table[m] * (1.0 - theta)) * &x;
        let lu = factor(lhs).ok_or(Error::Singular {
            context: "fundamental-matrix propagation",
            step: Some(m + 1),
        })?;
        x = lu.solve(&rhs).ok_or(Error::Singular {
            context: "fundamental-matrix propagation",
            step: Some(m + 1),
        })?;
    }
    Ok(x)
}

/// `X(T)` along a converged periodic steady state, using the same discrete
/// flow that produced the orbit.
pub fn fundamental_matrix(pss: &PeriodicSteadyState) -> Result<DMatrix<f64>> {
    if pss.c_table.len() != pss.samples.len() || pss.g_table.len() != pss.samples.len() {
        return Err(Error::InvalidArgument(
            "periodic steady state is missing its C/G tables".into(),
        ));
    }
    propagate(&pss.c_table, &pss.g_table, pss.step(), pss.method)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    /// Exactly one unit multiplier and every other multiplier inside the unit circle.
    Finite,
    /// Two or more unit multipliers: amplitude deviations never decay.
    Infinite,
    /// Some non-unit multiplier lies outside the unit circle.
    Unstable,
    /// No multiplier on the unit circle.
    NotOscillating,
}

/// `{re, im, modulus}` view of a complex value for reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Multiplier {
    pub re: f64,
    pub im: f64,
    pub modulus: f64,
}

impl From<C64> for Multiplier {
    fn from(z: C64) -> Self {
        Self {
            re: z.re,
            im: z.im,
            modulus: z.norm(),
        }
    }
}

/// A Floquet exponent `ln(λ)/T`; `None` components when `λ = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Exponent {
    pub re: Option<f64>,
    pub im: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QReport {
    pub verdict: Verdict,
    /// `ln 0.05 / ln |λ2|`, present only for a finite verdict.
    pub q: Option<f64>,
    pub lambda2_modulus: f64,
    pub lambda2: Option<Multiplier>,
    pub n_unit: usize,
    pub unit_tol: f64,
    /// Principal-branch `ln(λ_k) / T`, in spectrum order, when `T` is known.
    pub floquet_exponents: Vec<Exponent>,
}

impl QReport {
    /// Q rounded to the nearest integer, for display only.
    pub fn q_rounded(&self) -> Option<i64> {
        self.q.map(|q| q.round() as i64)
    }
}

/// Index of the phase-mode multiplier (closest to 1 among unit-modulus ones)
/// and of λ2 (largest-modulus multiplier other than that one).
pub fn split_phase_mode(multipliers: &[C64], unit_tol: f64) -> (Option<usize>, Option<usize>) {
    let phase = multipliers
        .iter()
        .enumerate()
        .filter(|(_, z)| (z.norm() - 1.0).abs() <= unit_tol)
        .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
        .map(|(i, _)| i);
    let lambda2 = multipliers
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != phase)
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i);
    (phase, lambda2)
}

/// `Q = ln 0.05 / ln |λ2|`.
pub fn q_from_modulus(lambda2_modulus: f64) -> f64 {
    if lambda2_modulus == 0.0 {
        0.0
    } else {
        SETTLE_FRACTION.ln() / lambda2_modulus.ln()
    }
}

/// Classifies a multiplier spectrum and computes Q.
pub fn q_factor(multipliers: &[C64], unit_tol: f64, period: Option<f64>) -> Result<QReport> {
    if multipliers.is_empty() {
        return Err(Error::InvalidArgument("empty multiplier spectrum".into()));
    }
    if !(unit_tol > 0.0 && unit_tol < 1.0) {
        return Err(Error::InvalidArgument(format!("unit_tol must lie in (0, 1), got {unit_tol}")));
    }
    let is_unit = |z: &C64| (z.norm() - 1.0).abs() <= unit_tol;
    let n_unit = multipliers.iter().filter(|z| is_unit(z)).count();
    let (_, l2) = split_phase_mode(multipliers, unit_tol);
    let lambda2 = l2.map(|i| multipliers[i]);
    let lambda2_modulus = lambda2.map(|z| z.norm()).unwrap_or(0.0);

    let verdict = if n_unit == 0 {
        Verdict::NotOscillating
    } else if multipliers.iter().any(|z| !is_unit(z) && z.norm() > 1.0 + unit_tol) {
        Verdict::Unstable
    } else if n_unit >= 2 {
        Verdict::Infinite
    } else {
        Verdict::Finite
    };
    let q = (verdict == Verdict::Finite).then(|| q_from_modulus(lambda2_modulus));

    let floquet_exponents = match period {
        Some(t) if t > 0.0 => multipliers
            .iter()
            .map(|z| {
                if z.norm() == 0.0 {
                    Exponent { re: None, im: None }
                } else {
                    let mu = z.ln() / t;
                    Exponent {
                        re: Some(mu.re),
                        im: Some(mu.im),
                    }
                }
            })
            .collect(),
        _ => Vec::new(),
    };

    Ok(QReport {
        verdict,
        q,
        lambda2_modulus,
        lambda2: lambda2.map(Multiplier::from),
        n_unit,
        unit_tol,
        floquet_exponents,
    })
}

/// Monodromy matrix with its spectrum and verdict.
#[derive(Debug, Clone)]
pub struct MonodromyResult {
    pub xt: DMatrix<f64>,
    pub multipliers: Vec<C64>,
    pub unit_tol: f64,
    pub n_unit: usize,
    pub lambda2: Option<C64>,
    pub q_report: QReport,
}

impl MonodromyResult {
    pub fn from_matrix(xt: DMatrix<f64>, unit_tol: f64, period: Option<f64>) -> Result<Self> {
        let multipliers = eigen_spectrum(&xt)?;
        let q_report = q_factor(&multipliers, unit_tol, period)?;
        let (_, l2) = split_phase_mode(&multipliers, unit_tol);
        Ok(Self {
            xt,
            n_unit: q_report.n_unit,
            lambda2: l2.map(|i| multipliers[i]),
            multipliers,
            unit_tol,
            q_report,
        })
    }

    /// Multiplier nearest to 1.
    pub fn phase_multiplier(&self) -> C64 {
        *self
            .multipliers
            .iter()
            .min_by(|a, b| (*a - 1.0).norm().total_cmp(&(*b - 1.0).norm()))
            .expect("non-empty spectrum")
    }

    /// Real eigenvector of `X(T)` for a real multiplier (real part for
    /// complex ones), unit norm.
    pub fn eigenvector_real(&self, lambda: C64) -> Result<DVector<f64>> {
        let v = eigenvector(&self.xt, lambda)?;
        let re = v.map(|z| z.re);
        let nrm = re.norm();
        if nrm == 0.0 {
            return Ok(v.map(|z| z.im) / v.map(|z| z.im).norm());
        }
        Ok(re / nrm)
    }
}

/// Full Floquet analysis of a periodic steady state.
pub fn analyze(pss: &PeriodicSteadyState, unit_tol: f64) -> Result<MonodromyResult> {
    let xt = fundamental_matrix(pss)?;
    MonodromyResult::from_matrix(xt, unit_tol, Some(pss.period))
}

/// Outcome of [`lambda2_power`].
#[derive(Debug, Clone)]
pub struct Lambda2Estimate {
    pub lambda2: C64,
    pub iterations: usize,
    /// Relative gap `1 - |λ3| / |λ2|` seen by the iteration.
    pub separation: f64,
    /// True when the full spectrum was used instead.
    pub fell_back: bool,
    pub warning: Option<String>,
}

/// Minimum relative modulus gap between λ2 and λ3 for the power method.
pub const MIN_SEPARATION: f64 = 0.05;

/// λ2 by deflated subspace iteration.
///
/// The phase direction `phase_vector` is removed with the oblique projector
/// `P = I - v wᵀ / (wᵀ v)`, where `w` is the left eigenvector at multiplier 1
/// from inverse iteration. A block of up to three vectors is iterated under
/// `P X` and the dominant Ritz value of the projected block is returned, so
/// complex-conjugate λ2 pairs are handled as well as real ones.
pub fn lambda2_power(xt: &DMatrix<f64>, phase_vector: &DVector<f64>) -> Result<Lambda2Estimate> {
    let n = xt.nrows();
    if n == 0 || !xt.is_square() || phase_vector.len() != n {
        return Err(Error::InvalidArgument("lambda2_power: dimension mismatch".into()));
    }
    if n == 1 {
        return Ok(Lambda2Estimate {
            lambda2: C64::new(0.0, 0.0),
            iterations: 0,
            separation: 1.0,
            fell_back: false,
            warning: None,
        });
    }
    let v = phase_vector / phase_vector.norm();
    let w = left_unit_vector(xt)?;
    let wv = w.dot(&v);
    if wv.abs() < 1e-12 {
        return Err(Error::InvalidArgument(
            "phase vector is orthogonal to the left unit eigenvector".into(),
        ));
    }
    let project = |z: &DMatrix<f64>| -> DMatrix<f64> {
        let coeffs = w.transpose() * z / wv;
        z - &v * coeffs
    };

    let p = n.min(3);
    let mut q = DMatrix::from_fn(n, p, |i, j| 1.0 / (1.0 + i as f64 + 1.7 * j as f64) + 0.31 * ((i * 5 + j * 3) % 7) as f64);
    q = project(&q);
    q = orthonormalize(q);
    let mut prev = C64::new(f64::NAN, 0.0);
    let mut ritz: Vec<C64> = Vec::new();
    let max_iter = 2000;
    let mut converged_at = None;
    for it in 1..=max_iter {
        let z = project(&(xt * &q));
        let h = q.transpose() * &z;
        let mut vals = eigen_spectrum(&h)?;
        vals.sort_by(crate::eigen::spectral_order);
        ritz = vals;
        q = orthonormalize(z);
        let lead = ritz[0];
        if (lead.norm() - prev.norm()).abs() <= 1e-14 * lead.norm().max(1e-300) && (lead - prev).norm() <= 1e-12 * lead.norm().max(1e-300) {
            converged_at = Some(it);
            break;
        }
        prev = lead;
        if q.iter().any(|x| !x.is_finite()) || q.ncols() == 0 {
            break;
        }
    }

    let lead = ritz.first().copied().unwrap_or(C64::new(0.0, 0.0));
    let next = ritz
        .iter()
        .skip(1)
        .find(|z| (*z - lead.conj()).norm() > 1e-9 * lead.norm().max(1e-300) || lead.im == 0.0)
        .map(|z| z.norm());
    let separation = match next {
        Some(m) if lead.norm() > 0.0 => 1.0 - m / lead.norm(),
        _ => 1.0,
    };

    if converged_at.is_some() && separation >= MIN_SEPARATION {
        return Ok(Lambda2Estimate {
            lambda2: lead,
            iterations: converged_at.unwrap_or(max_iter),
            separation,
            fell_back: false,
            warning: None,
        });
    }
    // poorly separated or unconverged: use the full spectrum
    let full = eigen_spectrum(xt)?;
    let phase_idx = full
        .iter()
        .enumerate()
        .min_by(|a, b| (*a.1 - 1.0).norm().total_cmp(&(*b.1 - 1.0).norm()))
        .map(|(i, _)| i);
    let lambda2 = full
        .iter()
        .enumerate()
        .find(|(i, _)| Some(*i) != phase_idx)
        .map(|(_, z)| *z)
        .unwrap_or(C64::new(0.0, 0.0));
    Ok(Lambda2Estimate {
        lambda2,
        iterations: converged_at.unwrap_or(max_iter),
        separation,
        fell_back: true,
        warning: Some(format!(
            "|λ2| and |λ3| are not separated by {:.0}% (gap {:.3}); used full spectrum",
            MIN_SEPARATION * 100.0,
            separation
        )),
    })
}

/// Left eigenvector of `xt` at multiplier 1, by inverse iteration on `xtᵀ`.
fn left_unit_vector(xt: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = xt.nrows();
    let t = xt.transpose();
    let mut shift = 1.0 + 1e-10;
    for _ in 0..4 {
        let a = &t - DMatrix::<f64>::identity(n, n) * shift;
        let lu = a.lu();
        let mut w = DVector::from_fn(n, |i, _| 1.0 + 0.37 * i as f64);
        let mut ok = true;
        for _ in 0..6 {
            match lu.solve(&w) {
                Some(z) if z.iter().all(|x| x.is_finite()) && z.norm() > 0.0 => {
                    w = &z / z.norm();
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(w);
        }
        shift += 1e-7;
    }
    Err(Error::Singular {
        context: "left phase eigenvector",
        step: None,
    })
}

/// Modified Gram-Schmidt on columns, dropping columns that vanish.
fn orthonormalize(mut a: DMatrix<f64>) -> DMatrix<f64> {
    let mut keep = Vec::new();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    for j in 0..a.ncols() {
        let mut col = a.column(j).clone_owned();
        for &k in &keep {
            let qk: DVector<f64> = a.column(k).clone_owned();
            let r = qk.dot(&col);
            col -= qk * r;
        }
        let nrm = col.norm();
        if nrm > 1e-13 * scale {
            a.set_column(j, &(col / nrm));
            keep.push(j);
        }
    }
    let cols: Vec<DVector<f64>> = keep.iter().map(|&j| a.column(j).clone_owned()).collect();
    if cols.is_empty() {
        return DMatrix::zeros(a.nrows(), 0);
    }
    DMatrix::from_columns(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn q_factor_examples() {
        let r = q_factor(&[c(1.0), c(0.0557), c(0.0031)], 1e-4, None).unwrap();
        assert_eq!(r.verdict, Verdict::Finite);
        assert!((r.q.unwrap() - 1.037).abs() < 1e-3);

        let r = q_factor(&[c(1.0), c(0.05)], 1e-4, None).unwrap();
        assert_eq!(r.q, Some(1.0));

        let r = q_factor(&[c(1.0), c(0.54)], 1e-4, None).unwrap();
        assert!((r.q.unwrap() - 4.86).abs() < 0.005);
        let r = q_factor(&[c(1.0), c(0.94)], 1e-4, None).unwrap();
        assert!((r.q.unwrap() - 48.4).abs() < 0.05);

        let r = q_factor(&[c(1.0), c(1.0), c(0.7)], 1e-4, None).unwrap();
        assert_eq!(r.verdict, Verdict::Infinite);
        assert_eq!(r.q, None);
        assert_eq!(r.n_unit, 2);

        let r = q_factor(&[c(1.2), c(1.0)], 1e-4, None).unwrap();
        assert_eq!(r.verdict, Verdict::Unstable);

        let r = q_factor(&[c(0.9), c(0.2)], 1e-4, None).unwrap();
        assert_eq!(r.verdict, Verdict::NotOscillating);
    }

    #[test]
    fn floquet_exponents_use_principal_log() {
        let t = 2.0;
        let r = q_factor(&[c(1.0), C64::new(0.0, 0.5), c(0.0)], 1e-4, Some(t)).unwrap();
        let e = &r.floquet_exponents;
        assert_eq!(e[0].re, Some(0.0));
        assert!((e[1].re.unwrap() - 0.5f64.ln() / t).abs() < 1e-15);
        assert!((e[1].im.unwrap() - std::f64::consts::FRAC_PI_2 / t).abs() < 1e-15);
        assert_eq!(e[2].re, None);
    }

    #[test]
    fn lambda2_selection_skips_one_unit_multiplier() {
        let m = [c(1.000001), c(0.99995), c(0.3)];
        let (phase, l2) = split_phase_mode(&m, 1e-4);
        assert_eq!(phase, Some(0));
        assert_eq!(l2, Some(1));
    }

    #[test]
    fn power_method_on_diagonal() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 0.1]));
        let est = lambda2_power(&x, &DVector::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        assert!(!est.fell_back);
        assert!((est.lambda2 - c(0.5)).norm() < 1e-12, "{est:?}");
    }

    #[test]
    fn power_method_handles_complex_pair() {
        // 1 ⊕ 0.8·rotation(0.9) ⊕ 0.2, then a similarity
        let (s, co) = 0.9f64.sin_cos();
        #[rustfmt::skip]
        let d = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.8 * co, -0.8 * s, 0.0,
            0.0, 0.8 * s, 0.8 * co, 0.0,
            0.0, 0.0, 0.0, 0.2,
        ]);
        let v = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.3 * (i as f64 - j as f64) });
        let x = &v * d * v.clone().try_inverse().unwrap();
        let phase = v.column(0).clone_owned();
        let est = lambda2_power(&x, &phase).unwrap();
        assert!((est.lambda2.norm() - 0.8).abs() < 1e-10, "{est:?}");
        assert!((est.lambda2.im.abs() - 0.8 * s).abs() < 1e-8);
    }

    #[test]
    fn power_method_falls_back_when_not_separated() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 0.49]));
        let est = lambda2_power(&x, &DVector::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        assert!(est.fell_back);
        assert!(est.warning.is_some());
        assert!((est.lambda2 - c(0.5)).norm() < 1e-12);
    }

    #[test]
    fn propagate_scalar_decay_matches_closed_form() {
        // q = x, f = x: X_{m+1} = (1/h - 1/2)/(1/h + 1/2) X_m
        let n = 10;
        let h = 0.1;
        let c = vec![DMatrix::identity(1, 1); n + 1];
        let g = vec![DMatrix::identity(1, 1); n + 1];
        let x = propagate(&c, &g, h, Method::Trapezoidal).unwrap();
        let r: f64 = (1.0 / h - 0.5) / (1.0 / h + 0.5);
        assert!((x[(0, 0)] - r.powi(n as i32)).abs() < 1e-14);
        let x = propagate(&c, &g, h, Method::BackwardEuler).unwrap();
        assert!((x[(0, 0)] - (1.0f64 / (1.0 + h)).powi(n as i32)).abs() < 1e-14);
    }
}
