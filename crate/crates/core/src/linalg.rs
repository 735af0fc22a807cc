//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, LU, Dyn};

/// Pivot ratio below which an LU factorization is treated as singular.
const PIVOT_RATIO: f64 = 1e-14;

pub type DenseLu = LU<f64, Dyn, Dyn>;

/// LU with partial pivoting, or `None` when a pivot collapses relative to the
/// largest one.
pub fn factor(m: DMatrix<f64>) -> Option<DenseLu> {
    let lu = m.lu();
    let u = lu.u();
    let diag = u.diagonal();
    let max = diag.amax();
    let min = diag.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if !max.is_finite() || max == 0.0 || min <= PIVOT_RATIO * max {
        return None;
    }
    Some(lu)
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

/// Angle between two vectors in degrees, ignoring orientation.
pub fn angle_deg(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let c = (a.dot(b) / (a.norm() * b.norm())).abs().min(1.0);
    c.acos().to_degrees()
}
