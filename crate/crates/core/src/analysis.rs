//! Companion analyses: empirical decay of a perturbed orbit, the power
//! balance of the negative-resistance LC oscillator, and closed-form Q of a
//! damped linear resonator.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dae::DaeSystem;
use crate::error::{Error, Result};
use crate::floquet::{analyze, q_from_modulus};
use crate::pss::{Crossing, PeriodicSteadyState, Section};
use crate::transient::{fmt17, integrate_steps};

/// Default noise floor for decay fits, relative to orbit amplitude.
pub const DEFAULT_NOISE_FLOOR: f64 = 1e-12;

/// Fitted ratios within this distance of 1 are reported as non-decaying.
pub const NON_DECAY_BAND: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub enum Direction {
    /// Explicit state-space direction (normalized internally).
    Vector(DVector<f64>),
    /// Real eigenvector of the monodromy matrix at λ2.
    Lambda2Eigenvector,
    /// Seeded random direction with the phase component removed.
    Random { seed: u64 },
}

impl Direction {
    pub fn label(&self) -> String {
        match self {
            Direction::Vector(_) => "vector".into(),
            Direction::Lambda2Eigenvector => "lambda2-eigenvector".into(),
            Direction::Random { seed } => format!("random(seed={seed})"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayMeasurement {
    pub cycles: Vec<usize>,
    /// Distance of each section crossing from the unperturbed crossing point.
    pub deviations: Vec<f64>,
    pub noise_floor: f64,
    /// Number of leading cycles above the floor that entered the fit.
    pub used_cycles: usize,
    /// Per-cycle decay ratio from a least-squares fit of `ln(deviation)`.
    pub fitted_ratio: f64,
    /// `ln 0.05 / ln r`, absent when the deviation does not decay.
    pub empirical_q: Option<f64>,
    pub non_decaying: bool,
    pub direction: String,
    pub eps: f64,
}

impl DecayMeasurement {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "cycle,deviation")?;
        for (c, d) in self.cycles.iter().zip(&self.deviations) {
            writeln!(out, "{c},{}", fmt17(*d))?;
        }
        Ok(())
    }
}

fn unit_direction(
    system: &DaeSystem,
    pss: &PeriodicSteadyState,
    direction: &Direction,
) -> Result<DVector<f64>> {
    let n = system.dim();
    let d = match direction {
        Direction::Vector(v) => {
            if v.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "direction has {} components, model has {n}",
                    v.len()
                )));
            }
            v.clone()
        }
        Direction::Lambda2Eigenvector => {
            let mono = analyze(pss, crate::floquet::DEFAULT_UNIT_TOL)?;
            let l2 = mono
                .lambda2
                .ok_or_else(|| Error::InvalidArgument("spectrum has no λ2".into()))?;
            mono.eigenvector_real(l2)?
        }
        Direction::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let raw = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let v = pss.phase_vector(system)?;
            let v = &v / v.norm();
            &raw - &v * raw.dot(&v)
        }
    };
    let nrm = d.norm();
    if !(nrm > 0.0 && nrm.is_finite()) {
        return Err(Error::InvalidArgument("perturbation direction is zero".into()));
    }
    Ok(d / nrm)
}

/// Poincaré section for decay measurements: through the grid sample where
/// the orbit bends least relative to its speed, on the component moving
/// fastest there. Anchoring at a grid sample makes the unperturbed orbit
/// cross exactly at the reference point.
pub fn decay_section(pss: &PeriodicSteadyState) -> (Section, usize) {
    let x = &pss.samples;
    let n = pss.steps();
    let mut best = (f64::INFINITY, 0usize);
    for m in 0..n {
        let prev = &x[(m + n - 1) % n];
        let next = &x[m + 1];
        let speed = (next - prev).norm();
        let bend = (next - &x[m] * 2.0 + prev).norm();
        if speed > 0.0 && bend / speed < best.0 {
            best = (bend / speed, m);
        }
    }
    let m = best.1;
    let vel = &x[m + 1] - &x[(m + n - 1) % n];
    let j = vel.iamax();
    (
        Section {
            index: j,
            value: x[m][j],
            rising: vel[j] > 0.0,
        },
        m,
    )
}

/// Kicks the orbit at `x_s(0)` by `eps · amplitude` along `direction`,
/// integrates `n_cycles` periods on the PSS grid and measures how far each
/// later crossing of a Poincaré section lands from where the unperturbed
/// orbit crosses it.
pub fn perturb_and_measure(
    system: &DaeSystem,
    pss: &PeriodicSteadyState,
    direction: &Direction,
    eps: f64,
    n_cycles: usize,
    noise_floor_rel: f64,
) -> Result<DecayMeasurement> {
    if !(1e-6..=1e-2).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps must lie in [1e-6, 1e-2], got {eps}")));
    }
    if n_cycles == 0 {
        return Err(Error::InvalidArgument("need at least one cycle".into()));
    }
    let d = unit_direction(system, pss, direction)?;
    let start = pss.x0() + &d * (eps * pss.amplitude);
    system.check_initial(&start)?;

    let h = pss.step();
    let cfg = crate::pss::PssOptions {
        method: pss.method,
        ..Default::default()
    }
    .integrator(h);
    // a little extra time so the last crossing is always bracketed
    let nsteps = n_cycles * pss.steps() + pss.steps() / 2;
    let traj = integrate_steps(system, &start, 0.0, h, nsteps, &cfg, false)?;
    let (section, m_ref) = decay_section(pss);
    let x_ref = &pss.samples[m_ref];
    let t_ref = pss.times[m_ref];
    let crossings: Vec<_> = interpolated_crossings(&traj.times, &traj.states, &section)
        .into_iter()
        .filter(|c| c.time > t_ref + 0.5 * pss.period)
        .take(n_cycles)
        .collect();

    let cycles: Vec<usize> = (1..=crossings.len()).collect();
    let deviations: Vec<f64> = crossings.iter().map(|c| (&c.state - x_ref).norm()).collect();
    let floor = noise_floor_rel * pss.amplitude;
    let used = deviations.iter().take_while(|&&v| v > floor).count();
    if used < 3 {
        return Err(Error::TooFewCycles { usable: used });
    }
    let ratio = fit_ratio(&deviations[..used]);
    let non_decaying = (ratio - 1.0).abs() <= NON_DECAY_BAND;
    Ok(DecayMeasurement {
        cycles,
        deviations,
        noise_floor: floor,
        used_cycles: used,
        fitted_ratio: ratio,
        empirical_q: (ratio < 1.0 && !non_decaying).then(|| q_from_modulus(ratio)),
        non_decaying,
        direction: direction.label(),
        eps,
    })
}

const STENCIL: usize = 8;

/// Section crossings of a uniformly sampled trajectory from an eight-point
/// Lagrange interpolant through neighbouring samples.
///
/// Once a perturbed trajectory has settled, its samples lie on the discrete
/// flow's invariant curve but at a time offset from the reference samples.
/// An integrator substep would leave that curve by its local error, which
/// scales with the offset and swamps fast-decaying deviations; the
/// interpolant is exact at the samples and O(h⁸) between them.
pub fn interpolated_crossings(times: &[f64], states: &[DVector<f64>], section: &Section) -> Vec<Crossing> {
    let len = states.len();
    let mut out = Vec::new();
    if len < STENCIL {
        return out;
    }
    for m in 0..len - 1 {
        let (g0, g1) = (section.gap(&states[m]), section.gap(&states[m + 1]));
        if !(g0 < 0.0 && g1 >= 0.0) {
            continue;
        }
        let first = m.saturating_sub(STENCIL / 2 - 1).min(len - STENCIL);
        let nodes = &states[first..first + STENCIL];
        let weights = |s: f64| -> [f64; STENCIL] {
            let mut w = [1.0; STENCIL];
            for (i, wi) in w.iter_mut().enumerate() {
                for k in 0..STENCIL {
                    if k != i {
                        *wi *= (s - k as f64) / (i as f64 - k as f64);
                    }
                }
            }
            w
        };
        let eval = |s: f64| -> DVector<f64> {
            let w = weights(s);
            nodes.iter().zip(w).fold(DVector::zeros(nodes[0].len()), |acc, (x, wi)| acc + x * wi)
        };
        let (mut lo, mut hi) = ((m - first) as f64, (m - first + 1) as f64);
        let mut glo = g0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let g = section.gap(&eval(mid));
            if (g < 0.0) == (glo < 0.0) {
                lo = mid;
                glo = g;
            } else {
                hi = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        let h = times[first + 1] - times[first];
        out.push(Crossing {
            time: times[first] + s * h,
            state: eval(s),
        });
    }
    out
}

/// `exp` of the least-squares slope of `ln(d_k)` against `k`.
pub fn fit_ratio(deviations: &[f64]) -> f64 {
    let n = deviations.len() as f64;
    let xs = (1..=deviations.len()).map(|k| k as f64);
    let ys: Vec<f64> = deviations.iter().map(|d| d.ln()).collect();
    let mx = xs.clone().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    (sxy / sxx).exp()
}

/// Average power of the two halves of `K (v - tanh(a v))` under a sinusoidal
/// drive `v = V sin(ωt)`, as functions of `V`.
#[derive(Debug, Clone, Serialize)]
pub struct PowerBalanceCurve {
    pub k: f64,
    pub a: f64,
    pub omega: f64,
    pub vmax: Vec<f64>,
    /// Dissipated by the positive conductance `K v`.
    pub p_pos: Vec<f64>,
    /// Delivered by the negative part `-K tanh(a v)`.
    pub p_neg: Vec<f64>,
    pub intersection_vmax: f64,
    /// `d p_pos / d(V²)` at the intersection.
    pub slope_pos: f64,
    /// `d p_neg / d(V²)` at the intersection.
    pub slope_neg: f64,
}

impl PowerBalanceCurve {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "vmax,p_pos,p_neg")?;
        for i in 0..self.vmax.len() {
            writeln!(out, "{},{},{}", fmt17(self.vmax[i]), fmt17(self.p_pos[i]), fmt17(self.p_neg[i]))?;
        }
        Ok(())
    }
}

/// Quadrature intervals per cycle for the negative-resistance power.
pub const BALANCE_POINTS: usize = 512;

/// `(1/T) ∫ K tanh(a V sin ωt) V sin ωt dt` by composite Simpson.
pub fn negative_power(k: f64, a: f64, omega: f64, vmax: f64, points: usize) -> f64 {
    let points = points + points % 2;
    let period = 2.0 * PI / omega;
    let h = period / points as f64;
    let g = |i: usize| {
        let v = vmax * (omega * h * i as f64).sin();
        k * (a * v).tanh() * v
    };
    let mut s = g(0) + g(points);
    for i in 1..points {
        s += if i % 2 == 1 { 4.0 * g(i) } else { 2.0 * g(i) };
    }
    s * h / 3.0 / period
}

pub fn positive_power(k: f64, vmax: f64) -> f64 {
    0.5 * k * vmax * vmax
}

pub fn power_balance_curve(k: f64, a: f64, omega: f64, vmax_grid: &[f64]) -> Result<PowerBalanceCurve> {
    if !(k > 0.0 && a > 0.0 && omega > 0.0) {
        return Err(Error::InvalidArgument("K, a and omega must be positive".into()));
    }
    if vmax_grid.is_empty() || vmax_grid[0] <= 0.0 || vmax_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("vmax grid must be positive and ascending".into()));
    }
    let p_pos: Vec<f64> = vmax_grid.iter().map(|&v| positive_power(k, v)).collect();
    let p_neg: Vec<f64> = vmax_grid
        .iter()
        .map(|&v| negative_power(k, a, omega, v, BALANCE_POINTS))
        .collect();
    let gap = |v: f64| positive_power(k, v) - negative_power(k, a, omega, v, BALANCE_POINTS);
    let i = (0..vmax_grid.len() - 1)
        .find(|&i| (p_pos[i] - p_neg[i]).signum() != (p_pos[i + 1] - p_neg[i + 1]).signum())
        .ok_or(Error::NoIntersection)?;
    let (mut lo, mut hi) = (vmax_grid[i], vmax_grid[i + 1]);
    let g_lo = gap(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (gap(mid) > 0.0) == (g_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let vx = 0.5 * (lo + hi);
    // slopes in the V² coordinate
    let u = vx * vx;
    let du = 1e-4 * u;
    let pn = |u: f64| negative_power(k, a, omega, u.sqrt(), BALANCE_POINTS);
    let slope_neg = (pn(u + du) - pn(u - du)) / (2.0 * du);
    Ok(PowerBalanceCurve {
        k,
        a,
        omega,
        vmax: vmax_grid.to_vec(),
        p_pos,
        p_neg,
        intersection_vmax: vx,
        slope_pos: 0.5 * k,
        slope_neg,
    })
}

fn check_zeta(zeta: f64) -> Result<()> {
    if zeta > 0.0 && zeta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("damping ratio must lie in (0, 1), got {zeta}")))
    }
}

/// Centre frequency over bandwidth of a damped resonator, `√(1-ζ²) / (2ζ)`.
pub fn ql1(zeta: f64) -> Result<f64> {
    check_zeta(zeta)?;
    Ok((1.0 - zeta * zeta).sqrt() / (2.0 * zeta))
}

/// Decay-based Q of a damped resonator, `1 / (1 - e^{-4πζ/√(1-ζ²)})`.
pub fn ql2(zeta: f64) -> Result<f64> {
    check_zeta(zeta)?;
    let x = 4.0 * PI * zeta / (1.0 - zeta * zeta).sqrt();
    Ok(1.0 / -(-x).exp_m1())
}

/// `|2π Q_l2 / Q_l1 - 1|`: how far the two definitions are from differing by
/// exactly a factor of 2π.
pub fn equivalence_gap(zeta: f64) -> Result<f64> {
    Ok((2.0 * PI * ql2(zeta)? / ql1(zeta)? - 1.0).abs())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResonatorRow {
    pub zeta: f64,
    pub ql1: f64,
    pub ql2: f64,
    pub ratio: f64,
    pub gap: f64,
}

pub fn resonator_table(zetas: &[f64]) -> Result<Vec<ResonatorRow>> {
    zetas
        .iter()
        .map(|&z| {
            let (a, b) = (ql1(z)?, ql2(z)?);
            Ok(ResonatorRow {
                zeta: z,
                ql1: a,
                ql2: b,
                ratio: 2.0 * PI * b / a,
                gap: (2.0 * PI * b / a - 1.0).abs(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ql1_closed_form() {
        assert!((ql1(0.05).unwrap() - 0.9975f64.sqrt() / 0.1).abs() < 1e-12);
        assert!((ql1(0.05).unwrap() - 9.9875).abs() < 1e-4);
    }

    #[test]
    fn equivalence_gap_series() {
        // 1/(1-e^{-x}) ≈ 1/x + 1/2 gives 2π Q_l2 / Q_l1 ≈ 1 + 2πζ for small ζ
        for z in [0.01, 0.005] {
            let g = equivalence_gap(z).unwrap();
            assert!((g - 2.0 * PI * z).abs() < 0.05 * 2.0 * PI * z, "{z}: {g}");
        }
    }

    #[test]
    fn damping_ratio_bounds() {
        for z in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(ql1(z).is_err());
            assert!(ql2(z).is_err());
        }
    }

    #[test]
    fn fit_recovers_geometric_ratio() {
        let d: Vec<f64> = (1..=8).map(|k| 3.0 * 0.7f64.powi(k)).collect();
        assert!((fit_ratio(&d) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn small_signal_power_ratio_is_a() {
        for a in [1.01, 2.0] {
            let v = 1e-4;
            let ratio = negative_power(1.0, a, 1.0, v, BALANCE_POINTS) / positive_power(1.0, v);
            assert!((ratio - a).abs() < 1e-6, "{ratio}");
        }
    }

    #[test]
    fn simpson_is_converged() {
        for v in [0.1, 0.5, 2.0, 10.0] {
            let a = negative_power(3.0, 2.0, 5.0, v, 512);
            let b = negative_power(3.0, 2.0, 5.0, v, 2048);
            assert!(((a - b) / b).abs() < 1e-9, "{v}: {a} {b}");
        }
    }

    #[test]
    fn balance_rejects_bad_grid() {
        assert!(power_balance_curve(1.0, 2.0, 1.0, &[]).is_err());
        assert!(power_balance_curve(1.0, 2.0, 1.0, &[0.5, 0.2]).is_err());
        // a < 1: no negative small-signal conductance, no crossing
        let grid: Vec<f64> = (1..50).map(|i| 0.1 * i as f64).collect();
        assert!(matches!(
            power_balance_curve(1.0, 0.8, 1.0, &grid),
            Err(Error::NoIntersection)
        ));
    }
}
