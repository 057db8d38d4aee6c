//! Coefficients `b(t,s,x)`, `σ(t,s,x)` of the Volterra equation, the optional
//! linear system `(h, f, w)`, the hypothesis constants that the sup-norm
//! bounds consume, and a library of built-in families with known constants.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::grid::SampledPath;

/// Drift and diffusion of `x_t = x_0 + ∫ b(t,s,x_s) ds + ∫ σ(t,s,x_s) dg_s`.
///
/// Layouts: `diffusion` writes `σ^{ij}` at `i*m + j`; `drift_jacobian` writes
/// `∂_{x_k} b^i` at `i*d + k`; `diffusion_jacobian` writes `∂_{x_k} σ^{il}`
/// at `(i*m + l)*d + k`.
pub trait VolterraCoefficients: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn drift(&self, t: f64, s: f64, x: &[f64], out: &mut [f64]);
    fn diffusion(&self, t: f64, s: f64, x: &[f64], out: &mut [f64]);
    fn drift_jacobian(&self, t: f64, s: f64, x: &[f64], out: &mut [f64]);
    fn diffusion_jacobian(&self, t: f64, s: f64, x: &[f64], out: &mut [f64]);

    /// For coefficients of the form `b(t,s,x) = p(t) b(0,s,x)` and
    /// `σ(t,s,x) = q(t) σ(0,s,x)` (jacobians alike), return `(p(t), q(t))`.
    /// Solvers then run in `O(n)` per path instead of `O(n²)`.
    fn time_factors(&self, _t: f64) -> Option<(f64, f64)> {
        None
    }
}

/// Coefficients `h(t,r,x) ∈ R^{d×d}` and `f(t,r,x) ∈ R^{d²×m}` of
/// `z_t = w_t + ∫ h(t,r,x_r) z_r dr + ∫ f(t,r,x_r) z_r dg_r`.
///
/// `f` writes the coefficient of `z^k dg^l` in component `i` at `(i*d + k)*m + l`.
pub trait LinearCoefficients: Send + Sync {
    fn h(&self, t: f64, r: f64, x: &[f64], out: &mut [f64]);
    fn f(&self, t: f64, r: f64, x: &[f64], out: &mut [f64]);
}

/// `b_0(t,s) = constant + lag·(t − s)`, the majorant in `|b| ≤ L_0|x| + b_0`
/// (or `≤ L_0 + b_0` for bounded drifts).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DriftMajorant {
    pub constant: f64,
    pub lag: f64,
}

impl DriftMajorant {
    pub fn eval(&self, t: f64, s: f64) -> f64 {
        self.constant + self.lag * (t - s).max(0.0)
    }
}

/// Hypothesis constants attached to a coefficient set.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisConstants {
    /// Lipschitz/Hölder constant `K` of σ.
    pub k: f64,
    /// Time-Lipschitz constant `L` of b.
    pub l: f64,
    /// Linear-growth constant `L_0` of b.
    pub l0: f64,
    /// `‖σ‖_∞`, when σ is bounded.
    pub sigma_sup: Option<f64>,
    /// Uniform ellipticity constant, when known.
    pub rho: Option<f64>,
    pub beta: f64,
    pub delta: f64,
    pub mu: f64,
    pub b0: DriftMajorant,
    /// True when `|b| ≤ L_0 + b_0` (no growth in x).
    pub bounded_drift: bool,
}

impl Default for HypothesisConstants {
    fn default() -> Self {
        Self {
            k: 0.0,
            l: 0.0,
            l0: 0.0,
            sigma_sup: None,
            rho: None,
            beta: 1.0,
            delta: 1.0,
            mu: 1.0,
            b0: DriftMajorant::default(),
            bounded_drift: true,
        }
    }
}

/// The linear system `(h, f, w)` with its sup norms.
#[derive(Clone)]
pub struct LinearPart {
    pub coeffs: Arc<dyn LinearCoefficients>,
    pub w: SampledPath,
    pub h_sup: f64,
    pub f_sup: f64,
}

/// Evaluators plus constants.
#[derive(Clone)]
pub struct CoefficientSet {
    pub model: Arc<dyn VolterraCoefficients>,
    pub constants: HypothesisConstants,
    pub linear: Option<LinearPart>,
}

impl std::fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("d", &self.model.state_dim())
            .field("m", &self.model.noise_dim())
            .field("constants", &self.constants)
            .field("linear", &self.linear.is_some())
            .finish()
    }
}

impl CoefficientSet {
    pub fn new(model: Arc<dyn VolterraCoefficients>, constants: HypothesisConstants) -> Self {
        Self { model, constants, linear: None }
    }

    pub fn with_linear(mut self, linear: LinearPart) -> Self {
        self.linear = Some(linear);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.model.noise_dim()
    }

    /// Check the declared `‖σ‖_∞` and ellipticity constant on probe points.
    /// Returns a description of the first violation.
    pub fn check_probes(&self, probes: &[(f64, f64, Vec<f64>)]) -> std::result::Result<(), String> {
        let (d, m) = (self.state_dim(), self.noise_dim());
        let mut sig = vec![0.0; d * m];
        for (t, s, x) in probes {
            self.model.diffusion(*t, *s, x, &mut sig);
            if let Some(bound) = self.constants.sigma_sup {
                let norm = sig.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > bound * (1.0 + 1e-12) {
                    return Err(format!("|σ({t}, {s}, {x:?})| = {norm} exceeds ‖σ‖_∞ = {bound}"));
                }
            }
        }
        if let Some(rho) = self.constants.rho {
            let report = crate::malliavin::ellipticity_check(self.model.as_ref(), probes, rho);
            if !report.passed {
                return Err(format!("ellipticity fails: value {} < ρ² = {}", report.worst_value, rho * rho));
            }
        }
        Ok(())
    }
}

/// Drift shapes of the built-in families.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftKind {
    Zero,
    /// `b^i = c_i`.
    Constant(Vec<f64>),
    /// `b^i = λ x_i`.
    Linear(f64),
    /// `b^i = offset + gain · tanh(x_i)`, a smooth clipped affine drift.
    Clipped { offset: f64, gain: f64 },
    /// `b^i = gain · (t − s) · sin(x_i)`.
    Convolution { gain: f64 },
}

/// Diffusion shapes of the built-in families.
#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionKind {
    /// Fixed `d × m` matrix, row-major.
    Constant(Vec<f64>),
    /// `σ^{ij} = A sin(x_i + ω t + ν s + j π/2)`.
    Sinusoidal { amplitude: f64, omega: f64, nu: f64 },
    /// `σ^{ij} = γ x_i δ_{ij}` (needs `d = m`).
    Linear(f64),
    /// `σ^{ij} = (2 + sin x_i) δ_{ij}` (needs `d = m`); uniformly elliptic with `ρ = 1`.
    Elliptic,
}

/// Composable built-in coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinCoefficients {
    d: usize,
    m: usize,
    drift: DriftKind,
    diffusion: DiffusionKind,
}

impl BuiltinCoefficients {
    pub fn new(d: usize, m: usize, drift: DriftKind, diffusion: DiffusionKind) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(invalid("state and noise dimensions must be positive"));
        }
        if let DriftKind::Constant(c) = &drift {
            if c.len() != d {
                return Err(invalid(format!("constant drift needs {d} entries, got {}", c.len())));
            }
        }
        match &diffusion {
            DiffusionKind::Constant(s) if s.len() != d * m => {
                return Err(invalid(format!("constant σ needs {} entries, got {}", d * m, s.len())));
            }
            DiffusionKind::Linear(_) | DiffusionKind::Elliptic if d != m => {
                return Err(invalid("diagonal diffusion families need d = m"));
            }
            _ => {}
        }
        Ok(Self { d, m, drift, diffusion })
    }

    pub fn drift_kind(&self) -> &DriftKind {
        &self.drift
    }

    pub fn diffusion_kind(&self) -> &DiffusionKind {
        &self.diffusion
    }

    /// Hypothesis constants implied by the chosen shapes.
    pub fn constants(&self) -> HypothesisConstants {
        let (d, m) = (self.d as f64, self.m as f64);
        let mut c = HypothesisConstants::default();
        match &self.drift {
            DriftKind::Zero => {}
            DriftKind::Constant(v) => c.b0.constant = v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            DriftKind::Linear(lambda) => {
                c.l0 = lambda.abs();
                c.bounded_drift = false;
            }
            DriftKind::Clipped { offset, gain } => {
                c.l0 = gain.abs() * d.sqrt();
                c.b0.constant = offset.abs() * d.sqrt();
            }
            DriftKind::Convolution { gain } => {
                c.l = gain.abs() * d.sqrt();
                c.b0.lag = gain.abs() * d.sqrt();
            }
        }
        match &self.diffusion {
            DiffusionKind::Constant(s) => {
                c.sigma_sup = Some(s.iter().map(|x| x * x).sum::<f64>().sqrt());
            }
            DiffusionKind::Sinusoidal { amplitude, .. } => {
                let a = amplitude.abs() * (d * m).sqrt();
                c.sigma_sup = Some(a);
                c.k = a;
            }
            DiffusionKind::Linear(gamma) => c.k = gamma.abs(),
            DiffusionKind::Elliptic => {
                c.sigma_sup = Some(3.0 * d.sqrt());
                c.k = 1.0;
                c.rho = Some(1.0);
            }
        }
        c
    }

    pub fn into_set(self) -> CoefficientSet {
        let constants = self.constants();
        CoefficientSet::new(Arc::new(self), constants)
    }
}

impl VolterraCoefficients for BuiltinCoefficients {
    fn state_dim(&self) -> usize {
        self.d
    }

    fn noise_dim(&self) -> usize {
        self.m
    }

    fn drift(&self, t: f64, s: f64, x: &[f64], out: &mut [f64]) {
        match &self.drift {
            DriftKind::Zero => out.fill(0.0),
            DriftKind::Constant(c) => out.copy_from_slice(c),
            DriftKind::Linear(lambda) => out.iter_mut().zip(x).for_each(|(o, xi)| *o = lambda * xi),
            DriftKind::Clipped { offset, gain } => {
                out.iter_mut().zip(x).for_each(|(o, xi)| *o = offset + gain * xi.tanh())
            }
            DriftKind::Convolution { gain } => {
                out.iter_mut().zip(x).for_each(|(o, xi)| *o = gain * (t - s) * xi.sin())
            }
        }
    }

    fn diffusion(&self, t: f64, s: f64, x: &[f64], out: &mut [f64]) {
        let (d, m) = (self.d, self.m);
        match &self.diffusion {
            DiffusionKind::Constant(c) => out.copy_from_slice(c),
            DiffusionKind::Sinusoidal { amplitude, omega, nu } => {
                for i in 0..d {
                    for j in 0..m {
                        out[i * m + j] = amplitude * (x[i] + omega * t + nu * s + j as f64 * FRAC_PI_2).sin();
                    }
                }
            }
            DiffusionKind::Linear(gamma) => {
                out.fill(0.0);
                for i in 0..d {
                    out[i * m + i] = gamma * x[i];
                }
            }
            DiffusionKind::Elliptic => {
                out.fill(0.0);
                for i in 0..d {
                    out[i * m + i] = 2.0 + x[i].sin();
                }
            }
        }
    }

    fn drift_jacobian(&self, t: f64, s: f64, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = match &self.drift {
                DriftKind::Zero | DriftKind::Constant(_) => 0.0,
                DriftKind::Linear(lambda) => *lambda,
                DriftKind::Clipped { gain, .. } => {
                    let c = x[i].cosh();
                    gain / (c * c)
                }
                DriftKind::Convolution { gain } => gain * (t - s) * x[i].cos(),
            };
        }
    }

    fn diffusion_jacobian(&self, t: f64, s: f64, x: &[f64], out: &mut [f64]) {
        let (d, m) = (self.d, self.m);
        out.fill(0.0);
        match &self.diffusion {
            DiffusionKind::Constant(_) => {}
            DiffusionKind::Sinusoidal { amplitude, omega, nu } => {
                for i in 0..d {
                    for l in 0..m {
                        out[(i * m + l) * d + i] =
                            amplitude * (x[i] + omega * t + nu * s + l as f64 * FRAC_PI_2).cos();
                    }
                }
            }
            DiffusionKind::Linear(gamma) => {
                for i in 0..d {
                    out[(i * m + i) * d + i] = *gamma;
                }
            }
            DiffusionKind::Elliptic => {
                for i in 0..d {
                    out[(i * m + i) * d + i] = x[i].cos();
                }
            }
        }
    }

    fn time_factors(&self, t: f64) -> Option<(f64, f64)> {
        let drift_ok = !matches!(self.drift, DriftKind::Convolution { .. });
        let diffusion_ok = match self.diffusion {
            DiffusionKind::Sinusoidal { omega, .. } => omega == 0.0,
            _ => true,
        };
        let _ = t;
        (drift_ok && diffusion_ok).then_some((1.0, 1.0))
    }
}

/// `h = h_0 I`, `f^{ikl} = f_0 δ_{ik}`: constant bounded linear coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantLinear {
    pub d: usize,
    pub m: usize,
    pub h0: f64,
    pub f0: f64,
}

impl ConstantLinear {
    /// Attach as the linear part of `set`, with a constant `w ≡ w0` on `w_grid`.
    pub fn into_part(self, w: SampledPath) -> LinearPart {
        let (d, m) = (self.d as f64, self.m as f64);
        LinearPart {
            h_sup: self.h0.abs() * d.sqrt(),
            f_sup: self.f0.abs() * (d * m).sqrt(),
            coeffs: Arc::new(self),
            w,
        }
    }
}

impl LinearCoefficients for ConstantLinear {
    fn h(&self, _t: f64, _r: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.d {
            out[i * self.d + i] = self.h0;
        }
    }

    fn f(&self, _t: f64, _r: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.d {
            for l in 0..self.m {
                out[(i * self.d + i) * self.m + l] = self.f0;
            }
        }
    }
}

/// Named built-in families with their tunable parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `σ` = `sigma` times the rectangular identity, `b = drift` in every component.
    Constant { sigma: f64, drift: f64 },
    /// Bounded sinusoidal σ with a clipped affine drift.
    Sinusoidal { amplitude: f64, omega: f64, nu: f64, offset: f64, gain: f64 },
    /// `σ = γ x`, `b = λ x`.
    Linear { gamma: f64, lambda: f64 },
    /// `σ = (2 + sin x) I` with a clipped affine drift.
    Elliptic { offset: f64, gain: f64 },
    /// `b = κ (t − s) sin x` with a bounded sinusoidal σ.
    Convolution { kappa: f64, amplitude: f64, omega: f64, nu: f64 },
}

impl Family {
    pub fn id(&self) -> &'static str {
        match self {
            Family::Constant { .. } => "constant",
            Family::Sinusoidal { .. } => "sinusoidal",
            Family::Linear { .. } => "linear",
            Family::Elliptic { .. } => "elliptic",
            Family::Convolution { .. } => "convolution",
        }
    }

    /// Default parameters for every family id.
    pub fn all_defaults() -> Vec<Family> {
        vec![
            Family::Constant { sigma: 1.0, drift: 0.0 },
            Family::Sinusoidal { amplitude: 1.0, omega: 0.5, nu: 0.5, offset: 0.2, gain: 0.5 },
            Family::Linear { gamma: 1.0, lambda: 0.3 },
            Family::Elliptic { offset: 0.0, gain: 0.5 },
            Family::Convolution { kappa: 1.0, amplitude: 1.0, omega: 0.5, nu: 0.5 },
        ]
    }

    pub fn build(&self, d: usize, m: usize) -> Result<BuiltinCoefficients> {
        let rect_identity = |c: f64| {
            let mut v = vec![0.0; d * m];
            for i in 0..d.min(m) {
                v[i * m + i] = c;
            }
            v
        };
        match *self {
            Family::Constant { sigma, drift } => {
                let dk = if drift == 0.0 { DriftKind::Zero } else { DriftKind::Constant(vec![drift; d]) };
                BuiltinCoefficients::new(d, m, dk, DiffusionKind::Constant(rect_identity(sigma)))
            }
            Family::Sinusoidal { amplitude, omega, nu, offset, gain } => BuiltinCoefficients::new(
                d,
                m,
                DriftKind::Clipped { offset, gain },
                DiffusionKind::Sinusoidal { amplitude, omega, nu },
            ),
            Family::Linear { gamma, lambda } => {
                BuiltinCoefficients::new(d, m, DriftKind::Linear(lambda), DiffusionKind::Linear(gamma))
            }
            Family::Elliptic { offset, gain } => {
                BuiltinCoefficients::new(d, m, DriftKind::Clipped { offset, gain }, DiffusionKind::Elliptic)
            }
            Family::Convolution { kappa, amplitude, omega, nu } => BuiltinCoefficients::new(
                d,
                m,
                DriftKind::Convolution { gain: kappa },
                DiffusionKind::Sinusoidal { amplitude, omega, nu },
            ),
        }
    }

    pub fn coefficient_set(&self, d: usize, m: usize) -> Result<CoefficientSet> {
        Ok(self.build(d, m)?.into_set())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(c: &BuiltinCoefficients) {
        let (d, m) = (c.state_dim(), c.noise_dim());
        let x: Vec<f64> = (0..d).map(|i| 0.3 + 0.2 * i as f64).collect();
        let (t, s) = (0.7, 0.2);
        let mut jb = vec![0.0; d * d];
        let mut js = vec![0.0; d * m * d];
        c.drift_jacobian(t, s, &x, &mut jb);
        c.diffusion_jacobian(t, s, &x, &mut js);
        let eps = 1e-6;
        for k in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += eps;
            xm[k] -= eps;
            let (mut bp, mut bm) = (vec![0.0; d], vec![0.0; d]);
            c.drift(t, s, &xp, &mut bp);
            c.drift(t, s, &xm, &mut bm);
            let (mut sp, mut sm) = (vec![0.0; d * m], vec![0.0; d * m]);
            c.diffusion(t, s, &xp, &mut sp);
            c.diffusion(t, s, &xm, &mut sm);
            for i in 0..d {
                assert!(((bp[i] - bm[i]) / (2.0 * eps) - jb[i * d + k]).abs() < 1e-7);
                for l in 0..m {
                    let fd = (sp[i * m + l] - sm[i * m + l]) / (2.0 * eps);
                    assert!((fd - js[(i * m + l) * d + k]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        for fam in Family::all_defaults() {
            for (d, m) in [(1, 1), (2, 2)] {
                fd_check(&fam.build(d, m).unwrap());
            }
        }
    }

    #[test]
    fn declared_bounds_hold_on_probes() {
        let probes: Vec<_> = (0..50)
            .map(|i| {
                let v = i as f64 * 0.37 - 9.0;
                (0.02 * i as f64, 0.01 * i as f64, vec![v, -0.5 * v])
            })
            .collect();
        for fam in Family::all_defaults() {
            let set = fam.coefficient_set(2, 2).unwrap();
            assert!(set.check_probes(&probes).is_ok(), "{}", fam.id());
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(BuiltinCoefficients::new(2, 1, DriftKind::Zero, DiffusionKind::Elliptic).is_err());
        assert!(BuiltinCoefficients::new(1, 1, DriftKind::Constant(vec![1.0, 2.0]), DiffusionKind::Elliptic).is_err());
        assert!(BuiltinCoefficients::new(0, 1, DriftKind::Zero, DiffusionKind::Constant(vec![])).is_err());
    }

    #[test]
    fn rank_deficient_constant_family() {
        let c = Family::Constant { sigma: 1.0, drift: 0.0 }.build(2, 1).unwrap();
        let mut s = vec![0.0; 2];
        c.diffusion(0.0, 0.0, &[0.0, 0.0], &mut s);
        assert_eq!(s, vec![1.0, 0.0]);
    }

    #[test]
    fn separability_flags() {
        assert!(Family::Linear { gamma: 1.0, lambda: 0.0 }.build(1, 1).unwrap().time_factors(0.5).is_some());
        assert!(Family::all_defaults()[1].build(1, 1).unwrap().time_factors(0.5).is_none());
        assert!(Family::all_defaults()[4].build(1, 1).unwrap().time_factors(0.5).is_none());
    }
}
