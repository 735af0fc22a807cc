mod common;

use nalgebra::{DMatrix, DVector};
use oscq_core::dae::fd_jacobian_check;
use oscq_core::models::{
    build_lc, build_ring, ideal_ring_multipliers, ideal_ring_period, ideal_ring_swing, lc_tank_period, ModelKind,
};
use oscq_core::pipeline::{run_q, QOptions};
use oscq_core::Verdict;

/// Comparator ring `v_i' = -v_i - sign(v_{i-1})` advanced from one switching
/// event to the next in closed form. `sign` tracks which side of zero each
/// stage is on, so a stage sitting exactly at zero is unambiguous.
struct ComparatorRing {
    v: [f64; 3],
    sign: [f64; 3],
    t: f64,
}

impl ComparatorRing {
    fn new(v: [f64; 3], sign: [f64; 3]) -> Self {
        Self { v, sign, t: 0.0 }
    }

    fn target(&self, i: usize) -> f64 {
        -self.sign[(i + 2) % 3]
    }

    /// Advances to the next zero crossing; returns the index that crossed.
    fn next_event(&mut self) -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        for i in 0..3 {
            let u = self.target(i);
            if u != self.sign[i] {
                let dt = (1.0 - self.v[i] / u).ln();
                if dt < best.0 {
                    best = (dt, i);
                }
            }
        }
        let (dt, hit) = best;
        assert!(dt.is_finite(), "ring stalled at {:?}", self.v);
        let targets: Vec<f64> = (0..3).map(|i| self.target(i)).collect();
        for (i, u) in targets.into_iter().enumerate() {
            self.v[i] = u + (self.v[i] - u) * (-dt).exp();
        }
        self.v[hit] = 0.0;
        self.sign[hit] = -self.sign[hit];
        self.t += dt;
        hit
    }

    /// Runs until `v1` crosses zero upward; returns `(v2, v3)` there.
    fn advance_to_section(&mut self) -> [f64; 2] {
        loop {
            if self.next_event() == 0 && self.sign[0] > 0.0 {
                return [self.v[1], self.v[2]];
            }
        }
    }
}

fn section_map(p: [f64; 2]) -> ([f64; 2], f64) {
    let mut ring = ComparatorRing::new([0.0, p[0], p[1]], [1.0, p[0].signum(), p[1].signum()]);
    let q = ring.advance_to_section();
    (q, ring.t)
}

#[test]
fn comparator_ring_event_oracle() {
    let mut ring = ComparatorRing::new([0.5, -0.1, 0.2], [1.0, -1.0, 1.0]);
    for _ in 0..20 {
        ring.advance_to_section();
    }
    let fixed = [ring.v[1], ring.v[2]];
    let (back, period) = section_map(fixed);
    assert!((back[0] - fixed[0]).abs() < 1e-12 && (back[1] - fixed[1]).abs() < 1e-12);
    assert!((period - ideal_ring_period(1.0)).abs() < 1e-12, "{period}");

    // peak voltage is reached just before each stage switches
    let mut peak: f64 = 0.0;
    for _ in 0..12 {
        ring.next_event();
        peak = peak.max(ring.v.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    assert!((peak - ideal_ring_swing()).abs() < 1e-12, "{peak}");

    // linearized return map by central differences
    let d = 1e-7;
    let mut jac = DMatrix::zeros(2, 2);
    for j in 0..2 {
        let mut lo = fixed;
        let mut hi = fixed;
        lo[j] -= d;
        hi[j] += d;
        let (a, _) = section_map(lo);
        let (b, _) = section_map(hi);
        for i in 0..2 {
            jac[(i, j)] = (b[i] - a[i]) / (2.0 * d);
        }
    }
    let mut eig = common::oracle_eigenvalues(&jac);
    eig.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let want = ideal_ring_multipliers();
    assert!((eig[0].norm() - want[1]).abs() < 1e-6, "{eig:?}");
    assert!((eig[1].norm() - want[2]).abs() < 1e-6, "{eig:?}");
}

#[test]
fn smooth_ring_approaches_comparator_ring() {
    let mut errors = Vec::new();
    for s in [20.0, 100.0] {
        let spec = ModelKind::Ring.spec(&[("s".into(), s)]).unwrap();
        let run = run_q(&spec, &QOptions::default()).unwrap();
        errors.push((run.pss.period - ideal_ring_period(1.0)).abs());
        let swing = run.pss.amplitude / 2.0;
        assert!((swing - ideal_ring_swing()).abs() < 0.05 * ideal_ring_swing(), "s={s}: {swing}");
    }
    assert!(errors[1] < errors[0], "{errors:?}");
    assert!(errors[1] < 1e-2 * ideal_ring_period(1.0));
}

#[test]
fn lossless_tank_has_two_unit_multipliers() {
    let spec = ModelKind::Lc.spec(&[("K".into(), 0.0)]).unwrap();
    let run = run_q(&spec, &QOptions::default()).unwrap();
    assert_eq!(run.monodromy.q_report.verdict, Verdict::Infinite);
    assert_eq!(run.monodromy.q_report.n_unit, 2);
    let t = lc_tank_period(0.5e-9, 0.5e-9);
    assert!((run.pss.period / t - 1.0).abs() < 1e-4);
}

#[test]
fn analytic_jacobians_match_finite_differences() {
    for kind in ModelKind::ALL {
        let spec = kind.spec(&[]).unwrap();
        let check = fd_jacobian_check(&spec.system, 25, 7).unwrap();
        assert!(check.max_rel_error() < 1e-6, "{}: {check:?}", kind.name());
    }
    let steep = build_ring(1.0, 5.0).unwrap();
    assert!(fd_jacobian_check(&steep, 25, 11).unwrap().max_rel_error() < 1e-6);
    let lc = build_lc(1.0, 2.0, 3.0, 1.5).unwrap();
    assert!(fd_jacobian_check(&lc, 25, 13).unwrap().max_rel_error() < 1e-6);
}

#[test]
fn seeds_are_valid_initial_states() {
    for kind in ModelKind::ALL {
        let spec = kind.spec(&[]).unwrap();
        spec.system.check_initial(&spec.seed).unwrap();
        let f = spec.system.f(&spec.seed).unwrap();
        assert!(f.iter().all(|v| v.is_finite()));
        assert!(f.norm() > 0.0, "{} seed is an equilibrium", kind.name());
    }
    assert!(ModelKind::Chemical.spec(&[]).unwrap().system.check_initial(&DVector::from_vec(vec![-0.1, 0.5, 0.5])).is_err());
}
