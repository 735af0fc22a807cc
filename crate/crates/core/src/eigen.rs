//! Dense nonsymmetric eigenvalues: balancing, Householder reduction to upper
//! Hessenberg form, then Francis double-shift QR on the Hessenberg matrix.

use std::cmp::Ordering;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

const RADIX: f64 = 2.0;

/// Diagonal similarity scaling so that row and column norms are comparable.
/// Eigenvalues are unchanged.
pub fn balance(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= sqrdx;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let ginv = 1.0 / f;
                for j in 0..n {
                    a[(i, j)] *= ginv;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
            }
        }
    }
}

/// In-place orthogonal reduction to upper Hessenberg form.
pub fn hessenberg(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    if n < 3 {
        return;
    }
    for k in 0..n - 2 {
        let alpha_norm = (k + 1..n).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>().sqrt();
        if alpha_norm == 0.0 {
            continue;
        }
        let alpha = if a[(k + 1, k)] > 0.0 { -alpha_norm } else { alpha_norm };
        let mut v = vec![0.0; n];
        for i in k + 1..n {
            v[i] = a[(i, k)];
        }
        v[k + 1] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // A <- (I - 2vv^T/v^Tv) A (I - 2vv^T/v^Tv)
        for j in 0..n {
            let s: f64 = (k + 1..n).map(|i| v[i] * a[(i, j)]).sum::<f64>() * 2.0 / vnorm2;
            for i in k + 1..n {
                a[(i, j)] -= s * v[i];
            }
        }
        for i in 0..n {
            let s: f64 = (k + 1..n).map(|j| a[(i, j)] * v[j]).sum::<f64>() * 2.0 / vnorm2;
            for j in k + 1..n {
                a[(i, j)] -= s * v[j];
            }
        }
        a[(k + 1, k)] = alpha;
        for i in k + 2..n {
            a[(i, k)] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Eigenvalues of an upper Hessenberg matrix by shifted double-step QR.
/// Fails after `100 n` QR sweeps without full deflation.
pub fn hqr(mut a: DMatrix<f64>) -> Result<Vec<C64>> {
    let n = a.nrows();
    let mut out = vec![C64::new(0.0, 0.0); n];
    if n == 0 {
        return Ok(out);
    }
    let max_sweeps = 100 * n;
    let mut sweeps = 0usize;

    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[(i, j)].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let at = |a: &DMatrix<f64>, i: isize, j: isize| a[(i as usize, j as usize)];

    while nn >= 0 {
        let mut its = 0;
        loop {
            // find a negligible subdiagonal element
            let mut l = nn;
            while l >= 1 {
                let mut s = at(&a, l - 1, l - 1).abs() + at(&a, l, l).abs();
                if s == 0.0 {
                    s = anorm;
                }
                if at(&a, l, l - 1).abs() + s == s {
                    a[(l as usize, l as usize - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = at(&a, nn, nn);
            if l == nn {
                out[nn as usize] = C64::new(x + t, 0.0);
                nn -= 1;
                break;
            }
            let mut y = at(&a, nn - 1, nn - 1);
            let mut w = at(&a, nn, nn - 1) * at(&a, nn - 1, nn);
            if l == nn - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                x += t;
                let (i1, i2) = (nn as usize - 1, nn as usize);
                if q >= 0.0 {
                    let z = p + sign(z, p);
                    out[i1] = C64::new(x + z, 0.0);
                    out[i2] = if z != 0.0 {
                        C64::new(x - w / z, 0.0)
                    } else {
                        C64::new(x + z, 0.0)
                    };
                } else {
                    out[i1] = C64::new(x + p, -z);
                    out[i2] = C64::new(x + p, z);
                }
                nn -= 2;
                break;
            }
            if sweeps >= max_sweeps {
                return Err(Error::EigenFailure { iterations: sweeps });
            }
            if its == 10 || its == 20 {
                // exceptional shift
                t += x;
                for i in 0..=nn as usize {
                    a[(i, i)] -= x;
                }
                let s = at(&a, nn, nn - 1).abs() + at(&a, nn - 1, nn - 2).abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            sweeps += 1;

            // look for two consecutive small subdiagonal elements
            let mut m = nn - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = at(&a, m, m);
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / at(&a, m + 1, m) + at(&a, m, m + 1);
                q = at(&a, m + 1, m + 1) - z - rr - ss;
                r = at(&a, m + 2, m + 1);
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = at(&a, m, m - 1).abs() * (q.abs() + r.abs());
                let v = p.abs() * (at(&a, m - 1, m - 1).abs() + z.abs() + at(&a, m + 1, m + 1).abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nn {
                a[(i as usize, i as usize - 2)] = 0.0;
                if i != m + 2 {
                    a[(i as usize, i as usize - 3)] = 0.0;
                }
            }
            // double QR step on rows l..nn, columns m..nn
            let mut k = m;
            while k < nn {
                if k != m {
                    p = at(&a, k, k - 1);
                    q = at(&a, k + 1, k - 1);
                    r = if k != nn - 1 { at(&a, k + 2, k - 1) } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    let (ku, k1) = (k as usize, k as usize + 1);
                    if k == m {
                        if l != m {
                            a[(ku, ku - 1)] = -a[(ku, ku - 1)];
                        }
                    } else {
                        a[(ku, ku - 1)] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in ku..=nn as usize {
                        let mut pp = a[(ku, j)] + q * a[(k1, j)];
                        if k != nn - 1 {
                            pp += r * a[(ku + 2, j)];
                            a[(ku + 2, j)] -= pp * z;
                        }
                        a[(k1, j)] -= pp * y;
                        a[(ku, j)] -= pp * x;
                    }
                    let mmin = if nn < k + 3 { nn } else { k + 3 };
                    for i in l as usize..=mmin as usize {
                        let mut pp = x * a[(i, ku)] + y * a[(i, k1)];
                        if k != nn - 1 {
                            pp += z * a[(i, ku + 2)];
                            a[(i, ku + 2)] -= pp * r;
                        }
                        a[(i, k1)] -= pp * q;
                        a[(i, ku)] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(out)
}

/// Moduli closer than this are treated as tied, so rounding noise cannot
/// reorder a pair like `1` and `±i`.
const MODULUS_GRID: f64 = 1e-10;

fn modulus_key(z: &C64) -> f64 {
    (z.norm() / MODULUS_GRID).round()
}

/// Descending modulus, then descending real part, then descending imaginary
/// part.
pub fn spectral_order(a: &C64, b: &C64) -> Ordering {
    modulus_key(b)
        .total_cmp(&modulus_key(a))
        .then(b.re.total_cmp(&a.re))
        .then(b.im.total_cmp(&a.im))
}

/// Full spectrum of a real square matrix, sorted by [`spectral_order`].
pub fn eigen_spectrum(m: &DMatrix<f64>) -> Result<Vec<C64>> {
    if !m.is_square() {
        return Err(Error::InvalidArgument("eigen_spectrum needs a square matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let mut a = m.clone();
    balance(&mut a);
    hessenberg(&mut a);
    let mut ev = hqr(a)?;
    ev.sort_by(spectral_order);
    Ok(ev)
}

/// Right eigenvector for an (approximate) eigenvalue by inverse iteration.
/// The result has unit 2-norm.
pub fn eigenvector(m: &DMatrix<f64>, lambda: C64) -> Result<DVector<C64>> {
    let n = m.nrows();
    let scale = m.amax().max(1.0);
    let mc: DMatrix<C64> = m.map(|v| C64::new(v, 0.0));
    // nudge off the exact eigenvalue so the shifted matrix stays factorable
    let mut shift = lambda + C64::new(1e-10 * scale, 1e-10 * scale);
    let mut v = DVector::from_fn(n, |i, _| C64::new(1.0 + 0.1 * i as f64, 0.05 * i as f64));
    for _ in 0..3 {
        let a = &mc - DMatrix::<C64>::identity(n, n) * shift;
        let lu = a.lu();
        let mut ok = true;
        for _ in 0..8 {
            match lu.solve(&v) {
                Some(w) if w.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => {
                    let nrm = w.norm();
                    if nrm == 0.0 {
                        ok = false;
                        break;
                    }
                    v = w / C64::new(nrm, 0.0);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(normalize_phase(v));
        }
        shift += C64::new(1e-7 * scale, 1e-7 * scale);
    }
    Err(Error::Singular {
        context: "inverse iteration",
        step: None,
    })
}

/// Rotates a complex vector so its largest entry is real and positive.
fn normalize_phase(v: DVector<C64>) -> DVector<C64> {
    let (mut best, mut idx) = (0.0, 0);
    for (i, z) in v.iter().enumerate() {
        if z.norm() > best {
            best = z.norm();
            idx = i;
        }
    }
    if best == 0.0 {
        return v;
    }
    let rot = v[idx].conj() / C64::new(best, 0.0);
    v.map(|z| z * rot)
}
