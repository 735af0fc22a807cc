//! Reference computations shared by the integration tests. Nothing here
//! calls into the eigen solver under test.

#![allow(dead_code)]

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type C64 = Complex<f64>;

/// Coefficients of `det(λI - A)`, highest degree first, by Faddeev-LeVerrier.
pub fn char_poly(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![1.0];
    let mut m = DMatrix::<f64>::zeros(n, n);
    let eye = DMatrix::<f64>::identity(n, n);
    let mut c = 1.0;
    for k in 1..=n {
        m = a * &m + &eye * c;
        c = -(a * &m).trace() / k as f64;
        coeffs.push(c);
    }
    coeffs
}

fn horner(coeffs: &[f64], z: C64) -> C64 {
    coeffs.iter().fold(C64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// All roots of a monic polynomial by Durand-Kerner iteration.
pub fn durand_kerner(coeffs: &[f64]) -> Vec<C64> {
    let n = coeffs.len() - 1;
    let radius = 1.0 + coeffs[1..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let seed = C64::new(0.4, 0.9);
    let mut z: Vec<C64> = (0..n).map(|k| seed.powu(k as u32)).collect();
    for _ in 0..5000 {
        let mut delta = 0.0f64;
        for i in 0..n {
            let mut denom = C64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    denom *= z[i] - z[j];
                }
            }
            let step = horner(coeffs, z[i]) / denom;
            z[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 * radius {
            break;
        }
    }
    z
}

/// Newton on `det(λI - A)` using `d/dλ ln det = tr((λI - A)^-1)`.
pub fn polish_root(a: &DMatrix<f64>, mut z: C64) -> C64 {
    let n = a.nrows();
    let ac: DMatrix<C64> = a.map(|v| C64::new(v, 0.0));
    for _ in 0..8 {
        let shifted = DMatrix::<C64>::identity(n, n) * z - &ac;
        let Some(inv) = shifted.try_inverse() else { break };
        let tr = inv.trace();
        if tr.norm() == 0.0 || !tr.re.is_finite() {
            break;
        }
        let step = C64::new(1.0, 0.0) / tr;
        z -= step;
        if step.norm() < 1e-16 * z.norm().max(1.0) {
            break;
        }
    }
    z
}

/// Eigenvalues from characteristic-polynomial roots polished against the
/// matrix itself.
pub fn oracle_eigenvalues(a: &DMatrix<f64>) -> Vec<C64> {
    durand_kerner(&char_poly(a)).into_iter().map(|z| polish_root(a, z)).collect()
}

/// Largest distance after pairing each reference value with its nearest
/// unused counterpart, relative to `max(1, |λ|)`.
pub fn match_error(reference: &[C64], computed: &[C64]) -> f64 {
    assert_eq!(reference.len(), computed.len());
    let mut used = vec![false; computed.len()];
    let mut worst = 0.0f64;
    for r in reference {
        let (j, d) = computed
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, c)| (j, (c - r).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        used[j] = true;
        worst = worst.max(d / r.norm().max(1.0));
    }
    worst
}

pub fn random_matrix(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
}

/// `V D V^-1` with a unit eigenvalue whose eigenvector is `V e_1`, the rest
/// of the spectrum inside the unit circle (a real value or a conjugate pair
/// per block). Returns the matrix, the unit eigenvector and the exact
/// eigenvalues.
pub fn monodromy_like(n: usize, seed: u64) -> (DMatrix<f64>, nalgebra::DVector<f64>, Vec<C64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1_000));
    let mut d = DMatrix::<f64>::zeros(n, n);
    let mut eig = vec![C64::new(1.0, 0.0)];
    d[(0, 0)] = 1.0;
    let mut i = 1;
    while i < n {
        if i + 1 < n && rng.random_bool(0.4) {
            let r: f64 = rng.random_range(0.05..0.95);
            let th: f64 = rng.random_range(0.2..2.8);
            let (re, im) = (r * th.cos(), r * th.sin());
            d[(i, i)] = re;
            d[(i, i + 1)] = im;
            d[(i + 1, i)] = -im;
            d[(i + 1, i + 1)] = re;
            eig.push(C64::new(re, im));
            eig.push(C64::new(re, -im));
            i += 2;
        } else {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let v = sign * rng.random_range(0.01..0.95);
            d[(i, i)] = v;
            eig.push(C64::new(v, 0.0));
            i += 1;
        }
    }
    let v = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)) + DMatrix::<f64>::identity(n, n) * 2.0;
    let vinv = v.clone().try_inverse().expect("diagonally shifted random matrix");
    (&v * d * vinv, v.column(0).into_owned(), eig)
}
