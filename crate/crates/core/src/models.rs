//! Shipped oscillator models and the name registry used by the CLI.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::Serialize;

use crate::dae::{DaeSystem, Oscillator, ParameterSet};
use crate::error::{Error, Result};

/// Golden ratio.
pub const PHI: f64 = 1.618_033_988_749_895;

// ---------------------------------------------------------------------------
// Ring oscillator

/// Three-stage ring: `tau dv_i/dt = -tanh(s v_{i-1}) - v_i` (indices cyclic).
///
/// As `s -> inf` the inverter approaches the ideal comparator `-sign(v)`.
#[derive(Debug, Clone)]
pub struct Ring {
    params: ParameterSet,
    tau: f64,
    s: f64,
}

const RING_PREV: [usize; 3] = [2, 0, 1];

impl Oscillator for Ring {
    fn name(&self) -> &str {
        "ring"
    }
    fn dim(&self) -> usize {
        3
    }
    fn state_names(&self) -> Vec<String> {
        vec!["v1".into(), "v2".into(), "v3".into()]
    }
    fn params(&self) -> &ParameterSet {
        &self.params
    }
    fn q(&self, x: &DVector<f64>) -> DVector<f64> {
        x * self.tau
    }
    fn f(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(3, |i, _| x[i] + (self.s * x[RING_PREV[i]]).tanh())
    }
    fn dq(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(3, 3) * self.tau)
    }
    fn df(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let mut g = DMatrix::identity(3, 3);
        for i in 0..3 {
            let p = RING_PREV[i];
            let c = (self.s * x[p]).cosh();
            g[(i, p)] = self.s / (c * c);
        }
        Some(g)
    }
    fn sampling_box(&self) -> Vec<(f64, f64)> {
        vec![(-1.2, 1.2); 3]
    }
}

pub fn ring_defaults() -> ParameterSet {
    ParameterSet::new("ring", &[("tau", 1.0), ("s", 100.0)])
}

pub fn build_ring(tau: f64, s: f64) -> Result<DaeSystem> {
    let params = ring_defaults().with_overrides(&[("tau".into(), tau), ("s".into(), s)])?;
    ring_from(&params)
}

fn ring_from(params: &ParameterSet) -> Result<DaeSystem> {
    let tau = params.require_positive("tau")?;
    let s = params.require_positive("s")?;
    Ok(DaeSystem::new(Arc::new(Ring {
        params: params.clone(),
        tau,
        s,
    })))
}

/// Multipliers of the ideal comparator ring: `{1, phi^-6, phi^-12}`.
pub fn ideal_ring_multipliers() -> [f64; 3] {
    [1.0, PHI.powi(-6), PHI.powi(-12)]
}

/// Period of the ideal comparator ring, `6 tau ln(phi)`.
pub fn ideal_ring_period(tau: f64) -> f64 {
    6.0 * tau * PHI.ln()
}

/// Peak stage voltage of the ideal comparator ring, `phi - 1`.
pub fn ideal_ring_swing() -> f64 {
    PHI - 1.0
}

// ---------------------------------------------------------------------------
// Negative-resistance LC oscillator

/// Parallel LC tank loaded by the nonlinear conductor
/// `i = K (v - tanh(a v))`.
///
/// States are the node voltage `v` and inductor current `i_L`.
#[derive(Debug, Clone)]
pub struct Lc {
    params: ParameterSet,
    l: f64,
    c: f64,
    k: f64,
    a: f64,
}

impl Lc {
    /// Current drawn by the nonlinear conductor.
    pub fn conductor_current(&self, v: f64) -> f64 {
        self.k * (v - (self.a * v).tanh())
    }
}

impl Oscillator for Lc {
    fn name(&self) -> &str {
        "lc"
    }
    fn dim(&self) -> usize {
        2
    }
    fn state_names(&self) -> Vec<String> {
        vec!["v".into(), "i_L".into()]
    }
    fn params(&self) -> &ParameterSet {
        &self.params
    }
    fn q(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![self.c * x[0], self.l * x[1]])
    }
    fn f(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[1] + self.conductor_current(x[0]), -x[0]])
    }
    fn dq(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_diagonal(&DVector::from_vec(vec![self.c, self.l])))
    }
    fn df(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let ch = (self.a * x[0]).cosh();
        let g = self.k * (1.0 - self.a / (ch * ch));
        Some(DMatrix::from_row_slice(2, 2, &[g, 1.0, -1.0, 0.0]))
    }
    fn sampling_box(&self) -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0), (-1.0, 1.0)]
    }
}

pub fn lc_defaults() -> ParameterSet {
    ParameterSet::new("lc", &[("L", 0.5e-9), ("C", 0.5e-9), ("K", 1.0), ("a", 1.01)])
}

/// `K = 0` is accepted and gives the lossless tank.
pub fn build_lc(l: f64, c: f64, k: f64, a: f64) -> Result<DaeSystem> {
    let params = lc_defaults().with_overrides(&[
        ("L".into(), l),
        ("C".into(), c),
        ("K".into(), k),
        ("a".into(), a),
    ])?;
    lc_from(&params)
}

fn lc_from(params: &ParameterSet) -> Result<DaeSystem> {
    let l = params.require_positive("L")?;
    let c = params.require_positive("C")?;
    let a = params.require_positive("a")?;
    let k = params.get("K");
    if k < 0.0 {
        return Err(Error::InvalidParameter {
            name: "K".into(),
            value: k,
            reason: "must be >= 0".into(),
        });
    }
    Ok(DaeSystem::new(Arc::new(Lc {
        params: params.clone(),
        l,
        c,
        k,
        a,
    })))
}

/// Resonance period of the bare tank, `2 pi sqrt(L C)`.
pub fn lc_tank_period(l: f64, c: f64) -> f64 {
    2.0 * PI * (l * c).sqrt()
}

// ---------------------------------------------------------------------------
// Spin-torque nano-oscillator (Landau-Lifshitz-Gilbert)

/// Normalized LLG right-hand side:
/// `tau dM/dt = -M x H - alpha M x (M x H) - beta M x (M x I_s)` with
/// `H = diag(K) M + H_ext`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Llg {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub anisotropy: Vector3<f64>,
    pub spin_current: Vector3<f64>,
    pub h_ext: Vector3<f64>,
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl Llg {
    fn from_params(p: &ParameterSet) -> Result<Self> {
        Ok(Self {
            tau: p.require_positive("tau")?,
            alpha: p.get("alpha"),
            beta: p.get("beta"),
            anisotropy: Vector3::new(p.get("Kx"), p.get("Ky"), p.get("Kz")),
            spin_current: Vector3::new(p.get("Isx"), p.get("Isy"), p.get("Isz")),
            h_ext: Vector3::new(p.get("Hx"), p.get("Hy"), p.get("Hz")),
        })
    }

    /// `tau dM/dt` at `m`.
    pub fn torque(&self, m: &Vector3<f64>) -> Vector3<f64> {
        let h = self.anisotropy.component_mul(m) + self.h_ext;
        let mh = m.cross(&h);
        let mi = m.cross(&self.spin_current);
        -mh - self.alpha * m.cross(&mh) - self.beta * m.cross(&mi)
    }

    /// Jacobian of [`Llg::torque`].
    pub fn torque_jacobian(&self, m: &Vector3<f64>) -> Matrix3<f64> {
        let h = self.anisotropy.component_mul(m) + self.h_ext;
        let mh = m.cross(&h);
        let mi = m.cross(&self.spin_current);
        let sm = skew(m);
        // d(M x H) = -[H]x dM + [M]x diag(K) dM
        let d_mh = -skew(&h) + sm * Matrix3::from_diagonal(&self.anisotropy);
        let d_mmh = -skew(&mh) + sm * d_mh;
        let d_mi = -skew(&self.spin_current);
        let d_mmi = -skew(&mi) + sm * d_mi;
        -d_mh - self.alpha * d_mmh - self.beta * d_mmi
    }
}

pub fn stno_defaults(model: &str) -> ParameterSet {
    ParameterSet::new(
        model,
        &[
            ("tau", 1e-9),
            ("alpha", 0.02),
            ("beta", 1.0),
            ("Kx", -10.0),
            ("Ky", 0.0),
            ("Kz", 1.0),
            ("Isx", 0.0),
            ("Isy", 0.0),
            ("Isz", -0.6),
            ("Hx", 0.0),
            ("Hy", 0.0),
            ("Hz", 2.0),
        ],
    )
}

/// Three-state Cartesian magnetization model. `|M|` is an exact invariant.
#[derive(Debug, Clone)]
pub struct StnoCartesian {
    params: ParameterSet,
    llg: Llg,
}

impl Oscillator for StnoCartesian {
    fn name(&self) -> &str {
        "stno-cartesian"
    }
    fn dim(&self) -> usize {
        3
    }
    fn state_names(&self) -> Vec<String> {
        vec!["mx".into(), "my".into(), "mz".into()]
    }
    fn params(&self) -> &ParameterSet {
        &self.params
    }
    fn q(&self, x: &DVector<f64>) -> DVector<f64> {
        x * self.llg.tau
    }
    fn f(&self, x: &DVector<f64>) -> DVector<f64> {
        let t = self.llg.torque(&Vector3::new(x[0], x[1], x[2]));
        DVector::from_vec(vec![-t.x, -t.y, -t.z])
    }
    fn dq(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(3, 3) * self.llg.tau)
    }
    fn df(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let j = self.llg.torque_jacobian(&Vector3::new(x[0], x[1], x[2]));
        Some(DMatrix::from_fn(3, 3, |r, c| -j[(r, c)]))
    }
    /// `|M|² - 1`.
    fn constraint(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        Some((x.norm_squared() - 1.0, x * 2.0))
    }
    fn sampling_box(&self) -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0); 3]
    }
}

/// Two-state form on the unit sphere, `M = (sin θ cos φ, sin θ sin φ, cos θ)`.
#[derive(Debug, Clone)]
pub struct StnoSpherical {
    params: ParameterSet,
    llg: Llg,
}

/// Minimum `sin θ` accepted by the spherical form.
pub const POLE_GUARD: f64 = 1e-8;

struct SphereFrame {
    m: Vector3<f64>,
    e_theta: Vector3<f64>,
    e_phi: Vector3<f64>,
    sin_t: f64,
    cos_t: f64,
}

impl SphereFrame {
    fn at(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Self {
            m: Vector3::new(st * cp, st * sp, ct),
            e_theta: Vector3::new(ct * cp, ct * sp, -st),
            e_phi: Vector3::new(-sp, cp, 0.0),
            sin_t: st,
            cos_t: ct,
        }
    }
}

impl StnoSpherical {
    /// `tau (dθ/dt, dφ/dt)`.
    fn rates(&self, theta: f64, phi: f64) -> (f64, f64) {
        let fr = SphereFrame::at(theta, phi);
        let t = self.llg.torque(&fr.m);
        (t.dot(&fr.e_theta), t.dot(&fr.e_phi) / fr.sin_t)
    }

    pub fn to_cartesian(theta: f64, phi: f64) -> Vector3<f64> {
        SphereFrame::at(theta, phi).m
    }

    pub fn from_cartesian(m: &Vector3<f64>) -> (f64, f64) {
        let r = m.norm();
        ((m.z / r).acos(), m.y.atan2(m.x))
    }
}

impl Oscillator for StnoSpherical {
    fn name(&self) -> &str {
        "stno-spherical"
    }
    fn dim(&self) -> usize {
        2
    }
    fn state_names(&self) -> Vec<String> {
        vec!["theta".into(), "phi".into()]
    }
    fn params(&self) -> &ParameterSet {
        &self.params
    }
    fn q(&self, x: &DVector<f64>) -> DVector<f64> {
        x * self.llg.tau
    }
    fn f(&self, x: &DVector<f64>) -> DVector<f64> {
        let (a, b) = self.rates(x[0], x[1]);
        DVector::from_vec(vec![-a, -b])
    }
    fn dq(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(2, 2) * self.llg.tau)
    }
    fn df(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let fr = SphereFrame::at(x[0], x[1]);
        let t = self.llg.torque(&fr.m);
        let jt = self.llg.torque_jacobian(&fr.m);
        // dM/dθ = e_θ, dM/dφ = sin θ e_φ
        let dt_dtheta = jt * fr.e_theta;
        let dt_dphi = jt * fr.e_phi * fr.sin_t;
        // de_θ/dθ = -M, de_θ/dφ = cos θ e_φ, de_φ/dθ = 0, de_φ/dφ = -(cos φ, sin φ, 0)
        let de_phi_dphi = Vector3::new(-x[1].cos(), -x[1].sin(), 0.0);
        let tp = t.dot(&fr.e_phi);
        let a_theta = dt_dtheta.dot(&fr.e_theta) - t.dot(&fr.m);
        let a_phi = dt_dphi.dot(&fr.e_theta) + fr.cos_t * tp;
        let b_theta = dt_dtheta.dot(&fr.e_phi) / fr.sin_t - tp * fr.cos_t / (fr.sin_t * fr.sin_t);
        let b_phi = (dt_dphi.dot(&fr.e_phi) + t.dot(&de_phi_dphi)) / fr.sin_t;
        Some(DMatrix::from_row_slice(2, 2, &[-a_theta, -a_phi, -b_theta, -b_phi]))
    }
    fn check_domain(&self, x: &DVector<f64>) -> std::result::Result<(), String> {
        if x[0].sin().abs() < POLE_GUARD {
            Err(format!("theta = {} is at a coordinate pole", x[0]))
        } else {
            Ok(())
        }
    }
    fn sampling_box(&self) -> Vec<(f64, f64)> {
        vec![(0.3, PI - 0.3), (-PI, PI)]
    }
}

pub fn build_stno_cartesian(params: &ParameterSet) -> Result<DaeSystem> {
    let params = stno_defaults("stno-cartesian").with_overrides(&overrides_of(params))?;
    let llg = Llg::from_params(&params)?;
    Ok(DaeSystem::new(Arc::new(StnoCartesian { params, llg })))
}

pub fn build_stno_spherical(params: &ParameterSet) -> Result<DaeSystem> {
    let params = stno_defaults("stno-spherical").with_overrides(&overrides_of(params))?;
    let llg = Llg::from_params(&params)?;
    Ok(DaeSystem::new(Arc::new(StnoSpherical { params, llg })))
}

fn overrides_of(p: &ParameterSet) -> Vec<(String, f64)> {
    p.iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Seed magnetization direction used for warmup.
fn stno_seed() -> Vector3<f64> {
    Vector3::new(0.5, 0.1, 0.86).normalize()
}

// ---------------------------------------------------------------------------
// Chemical oscillator

/// Cyclic autocatalysis `A + B -> 2B`, `B + C -> 2C`, `C + A -> 2A`, all at
/// rate `k`, under mass action. Both `a + b + c` and `abc` are conserved.
#[derive(Debug, Clone)]
pub struct Chemical {
    params: ParameterSet,
    k: f64,
}

impl Oscillator for Chemical {
    fn name(&self) -> &str {
        "chemical"
    }
    fn dim(&self) -> usize {
        3
    }
    fn state_names(&self) -> Vec<String> {
        vec!["a".into(), "b".into(), "c".into()]
    }
    fn params(&self) -> &ParameterSet {
        &self.params
    }
    fn q(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn f(&self, x: &DVector<f64>) -> DVector<f64> {
        let (a, b, c) = (x[0], x[1], x[2]);
        let k = self.k;
        DVector::from_vec(vec![-k * (c * a - a * b), -k * (a * b - b * c), -k * (b * c - c * a)])
    }
    fn dq(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(3, 3))
    }
    fn df(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (a, b, c) = (x[0], x[1], x[2]);
        let k = self.k;
        #[rustfmt::skip]
        let g = DMatrix::from_row_slice(3, 3, &[
            -k * (c - b), k * a, -k * a,
            -k * b, -k * (a - c), k * b,
            k * c, -k * c, -k * (b - a),
        ]);
        Some(g)
    }
    fn check_initial(&self, x: &DVector<f64>) -> std::result::Result<(), String> {
        if x.iter().any(|&v| v < 0.0) {
            Err("concentrations must be nonnegative".into())
        } else {
            Ok(())
        }
    }
    fn sampling_box(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 2.0); 3]
    }
}

pub fn chemical_defaults() -> ParameterSet {
    ParameterSet::new("chemical", &[("k", 1.0)])
}

pub fn build_chemical(k: f64) -> Result<DaeSystem> {
    chemical_from(&chemical_defaults().with_overrides(&[("k".into(), k)])?)
}

fn chemical_from(params: &ParameterSet) -> Result<DaeSystem> {
    let k = params.require_positive("k")?;
    Ok(DaeSystem::new(Arc::new(Chemical {
        params: params.clone(),
        k,
    })))
}

// ---------------------------------------------------------------------------
// Registry

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ring,
    Lc,
    StnoCartesian,
    StnoSpherical,
    Chemical,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Ring,
        ModelKind::Lc,
        ModelKind::StnoCartesian,
        ModelKind::StnoSpherical,
        ModelKind::Chemical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ring => "ring",
            ModelKind::Lc => "lc",
            ModelKind::StnoCartesian => "stno-cartesian",
            ModelKind::StnoSpherical => "stno-spherical",
            ModelKind::Chemical => "chemical",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::UnknownModel(name.to_string()))
    }

    pub fn description(self) -> &'static str {
        match self {
            ModelKind::Ring => "three-stage ring with tanh inverters and RC delay",
            ModelKind::Lc => "LC tank with nonlinear conductor K(v - tanh(a v))",
            ModelKind::StnoCartesian => "spin-torque oscillator, LLG in Cartesian M (3 states)",
            ModelKind::StnoSpherical => "spin-torque oscillator, LLG on the unit sphere (theta, phi)",
            ModelKind::Chemical => "cyclic mass-action autocatalysis (conservative)",
        }
    }

    pub fn defaults(self) -> ParameterSet {
        match self {
            ModelKind::Ring => ring_defaults(),
            ModelKind::Lc => lc_defaults(),
            ModelKind::StnoCartesian | ModelKind::StnoSpherical => stno_defaults(self.name()),
            ModelKind::Chemical => chemical_defaults(),
        }
    }

    /// Resolves defaults plus `overrides` into a ready-to-use spec.
    pub fn spec(self, overrides: &[(String, f64)]) -> Result<ModelSpec> {
        let params = self.defaults().with_overrides(overrides)?;
        let system = match self {
            ModelKind::Ring => ring_from(&params)?,
            ModelKind::Lc => lc_from(&params)?,
            ModelKind::StnoCartesian => build_stno_cartesian(&params)?,
            ModelKind::StnoSpherical => build_stno_spherical(&params)?,
            ModelKind::Chemical => chemical_from(&params)?,
        };
        let (seed, period_hint, oracle) = match self {
            ModelKind::Ring => {
                let tau = params.get("tau");
                (
                    vec![0.5, -0.1, 0.2],
                    ideal_ring_period(tau),
                    Oracle {
                        multipliers: Some(ideal_ring_multipliers().to_vec()),
                        period: Some(ideal_ring_period(tau)),
                        amplitude: Some(ideal_ring_swing()),
                    },
                )
            }
            ModelKind::Lc => {
                let t = lc_tank_period(params.get("L"), params.get("C"));
                let oracle = if params.get("K") == 0.0 {
                    Oracle {
                        period: Some(t),
                        ..Oracle::default()
                    }
                } else {
                    Oracle::default()
                };
                (vec![0.5, 0.0], t, oracle)
            }
            ModelKind::StnoCartesian => {
                let m = stno_seed();
                (vec![m.x, m.y, m.z], 0.88 * params.get("tau"), Oracle::default())
            }
            ModelKind::StnoSpherical => {
                let (th, ph) = StnoSpherical::from_cartesian(&stno_seed());
                (vec![th, ph], 0.88 * params.get("tau"), Oracle::default())
            }
            ModelKind::Chemical => {
                // Small-oscillation period about the symmetric point a = b = c = 1/2.
                let k = params.get("k");
                (vec![1.0, 0.3, 0.2], 2.0 * PI / (k * 0.5 * 3f64.sqrt()), Oracle::default())
            }
        };
        let sampling_box = system.model().sampling_box();
        Ok(ModelSpec {
            kind: self,
            params,
            seed: DVector::from_vec(seed),
            period_hint,
            sampling_box,
            oracle,
            system,
        })
    }
}

/// Known reference quantities for a model, when any exist.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Oracle {
    pub multipliers: Option<Vec<f64>>,
    pub period: Option<f64>,
    pub amplitude: Option<f64>,
}

/// A resolved model: parameters, seed state, period hint and the system.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub params: ParameterSet,
    pub seed: DVector<f64>,
    pub period_hint: f64,
    pub sampling_box: Vec<(f64, f64)>,
    pub oracle: Oracle,
    pub system: DaeSystem,
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        self.kind.name()
    }
}

/// Looks up a model by name and applies overrides.
pub fn lookup(name: &str, overrides: &[(String, f64)]) -> Result<ModelSpec> {
    ModelKind::parse(name)?.spec(overrides)
}
