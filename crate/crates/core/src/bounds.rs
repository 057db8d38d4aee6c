//! Explicit sup-norm bounds for the solution, calibration of the generic
//! constant `C` against Monte Carlo ensembles, and λ-scaling experiments.

use crate::coefficients::CoefficientSet;
use crate::error::{invalid, Error, Result};
use crate::grid::{holder_norm, sup_norm, SampledPath, TimeGrid};
use crate::quadrature::linear_fit;
use crate::volterra::solve_svie;

/// Which bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundKind {
    /// Bounded σ: polynomial in `‖g‖_{1−α}`.
    Polynomial,
    /// General σ with linear growth: exponential in `‖g‖_{1−α}`.
    Exponential,
    /// The linear system `z = w + ∫ h z dr + ∫ f z dg`.
    LinearSystem,
}

impl BoundKind {
    pub fn name(&self) -> &'static str {
        match self {
            BoundKind::Polynomial => "polynomial",
            BoundKind::Exponential => "exponential",
            BoundKind::LinearSystem => "linear_system",
        }
    }
}

/// Constants entering the bounds. `c` is the generic constant `C_{α,β}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundParams {
    pub horizon: f64,
    pub alpha: f64,
    /// Carried for completeness; none of the formulas depend on it.
    pub beta: f64,
    pub l: f64,
    pub l0: f64,
    pub k: f64,
    pub sigma_sup: Option<f64>,
    pub h_sup: Option<f64>,
    pub f_sup: Option<f64>,
    pub w_sup: Option<f64>,
    pub b0_alpha: f64,
    pub c: f64,
}

impl BoundParams {
    /// Constants of a coefficient set on `[0, horizon]`, with `B_{0,α}` computed on `grid`.
    pub fn from_coefficients(coeffs: &CoefficientSet, alpha: f64, grid: &TimeGrid, c: f64) -> Result<Self> {
        let k = &coeffs.constants;
        let b0 = k.b0;
        let lin = coeffs.linear.as_ref();
        Ok(Self {
            horizon: grid.horizon(),
            alpha,
            beta: k.beta,
            l: k.l,
            l0: k.l0,
            k: k.k,
            sigma_sup: k.sigma_sup,
            h_sup: lin.map(|p| p.h_sup),
            f_sup: lin.map(|p| p.f_sup),
            w_sup: lin.map(|p| sup_norm(&p.w, 0.0, grid.horizon())).transpose()?,
            b0_alpha: b0_alpha(|t, s| b0.eval(t, s), alpha, grid)?,
            c,
        })
    }

    fn with_c(&self, c: f64) -> Self {
        Self { c, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        let named = [
            ("T", Some(self.horizon)),
            ("L", Some(self.l)),
            ("L_0", Some(self.l0)),
            ("K", Some(self.k)),
            ("B_{0,α}", Some(self.b0_alpha)),
            ("C", Some(self.c)),
            ("‖σ‖_∞", self.sigma_sup),
            ("‖h‖_∞", self.h_sup),
            ("‖f‖_∞", self.f_sup),
            ("‖w‖_∞", self.w_sup),
        ];
        for (name, v) in named {
            if let Some(v) = v {
                if v.is_nan() || v < 0.0 {
                    return Err(invalid(format!("{name} must be non-negative, got {v}")));
                }
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(invalid(format!("α must lie in (0, 1/2), got {}", self.alpha)));
        }
        Ok(())
    }
}

fn required(v: Option<f64>, name: &str, kind: BoundKind) -> Result<f64> {
    v.ok_or_else(|| invalid(format!("the {} bound needs {name}", kind.name())))
}

/// `sup_t (∫_0^t |b_0(t,u)|^{1/α} du)^α`, as a left-rectangle sum on `grid`.
pub fn b0_alpha<F: Fn(f64, f64) -> f64>(b0: F, alpha: f64, grid: &TimeGrid) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid(format!("α must lie in (0, 1/2), got {alpha}")));
    }
    let h = grid.step();
    let mut best = 0.0f64;
    for k in 1..=grid.steps() {
        let t = grid.node(k);
        let mut acc = 0.0;
        for j in 0..k {
            let v = b0(t, grid.node(j));
            if !v.is_finite() {
                return Err(invalid(format!("b_0({t}, {}) is not finite", grid.node(j))));
            }
            acc += v.abs().powf(1.0 / alpha) * h;
        }
        best = best.max(acc.powf(alpha));
    }
    Ok(best)
}

/// Right-hand side of the chosen bound for `|x_0|` and `‖g‖_{1−α}`.
pub fn eval_bound(kind: BoundKind, params: &BoundParams, x0_norm: f64, g_norm: f64) -> Result<f64> {
    params.validate()?;
    if x0_norm.is_nan() || x0_norm < 0.0 || g_norm.is_nan() || g_norm < 0.0 {
        return Err(invalid("|x_0| and ‖g‖ must be non-negative"));
    }
    let p = params;
    let t = p.horizon;
    let q = 1.0 / (1.0 - p.alpha);
    let envelope = |k_a: f64, k_b: f64| (k_a + k_b * g_norm).powf(q).max(1.0).max(t);
    match kind {
        BoundKind::Polynomial => {
            let sigma = required(p.sigma_sup, "‖σ‖_∞", kind)?;
            let k1 = 4.0 * (p.l * t.max(1.0) + p.l0 + p.b0_alpha);
            let k2 = p.c * (t + 1.0 + sigma);
            Ok(x0_norm + 1.0 + t * envelope(k1, k2))
        }
        BoundKind::Exponential => {
            let k3 = 6.0 * (p.l0 + p.l * (t + 1.0) + p.b0_alpha);
            let k4 = p.c * (t + 1.0);
            Ok((x0_norm + 1.0) * (2.0 * t * envelope(k3, k4)).exp())
        }
        BoundKind::LinearSystem => {
            let h = required(p.h_sup, "‖h‖_∞", kind)?;
            let f = required(p.f_sup, "‖f‖_∞", kind)?;
            let w = required(p.w_sup, "‖w‖_∞", kind)?;
            let sigma = required(p.sigma_sup, "‖σ‖_∞", kind)?;
            let growth = t.exp() * (t + 1.0);
            let k5 = 16.0 * (p.k + h + p.l + p.l0 + p.b0_alpha) * growth;
            let k6 = p.c * (f + sigma + 1.0) * growth;
            Ok(2.0 * (1.0 + w) * (t * envelope(k5, k6)).exp())
        }
    }
}

/// One Monte Carlo observation: measured sup norm with its driver norm and `|x_0|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsemblePoint {
    pub measured: f64,
    pub g_norm: f64,
    pub x0_norm: f64,
}

fn dominates(kind: BoundKind, params: &BoundParams, c: f64, ensemble: &[EnsemblePoint]) -> Result<bool> {
    let p = params.with_c(c);
    for e in ensemble {
        if eval_bound(kind, &p, e.x0_norm, e.g_norm)? < e.measured {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Smallest `C ≥ 0` for which the bound dominates every measured value,
/// by bracketing and bisection to `1e−6` relative.
pub fn calibrate_constant(kind: BoundKind, params: &BoundParams, ensemble: &[EnsemblePoint]) -> Result<f64> {
    if ensemble.is_empty() {
        return Err(invalid("calibration needs a non-empty ensemble"));
    }
    if dominates(kind, params, 0.0, ensemble)? {
        return Ok(0.0);
    }
    let p0 = params.with_c(0.0);
    for e in ensemble {
        if e.g_norm == 0.0 && eval_bound(kind, &p0, e.x0_norm, 0.0)? < e.measured {
            return Err(Error::CalibrationFailure(format!(
                "measured {} exceeds the bound at ‖g‖ = 0, where C has no effect",
                e.measured
            )));
        }
    }
    let mut hi = 1.0;
    while !dominates(kind, params, hi, ensemble)? {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::CalibrationFailure("no finite C dominates the ensemble".into()));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if dominates(kind, params, mid, ensemble)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// One row of a bound check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub measured: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub g_norm: f64,
    pub x0_norm: f64,
}

/// Per-path comparison against the bound at the calibrated constant.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub rows: Vec<BoundRow>,
    pub max_ratio: f64,
    pub calibrated_c: f64,
}

impl BoundReport {
    pub fn build(kind: BoundKind, params: &BoundParams, ensemble: &[EnsemblePoint]) -> Result<Self> {
        let c = calibrate_constant(kind, params, ensemble)?;
        let p = params.with_c(c);
        let rows = ensemble
            .iter()
            .map(|e| {
                let rhs = eval_bound(kind, &p, e.x0_norm, e.g_norm)?;
                Ok(BoundRow { measured: e.measured, rhs, ratio: e.measured / rhs, g_norm: e.g_norm, x0_norm: e.x0_norm })
            })
            .collect::<Result<Vec<_>>>()?;
        let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        Ok(Self { kind, rows, max_ratio, calibrated_c: c })
    }
}

/// `‖g‖_{1−α}` on the whole grid: sup norm plus `(1−α)`-Hölder quotient.
pub fn driver_norm(g: &SampledPath, alpha: f64) -> Result<f64> {
    holder_norm(g, 1.0 - alpha, 0.0, g.grid().horizon())
}

/// Growth of `‖x‖_∞` along drivers `λ g`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    /// Ladder entries that solved without overflow.
    pub lambdas: Vec<f64>,
    pub sup_norms: Vec<f64>,
    /// Slope of `log ‖x‖_∞` against `log λ`.
    pub poly_slope: f64,
    /// Slope of `log log(‖x‖_∞/(|x_0|+1) + e)` against `log λ`.
    pub loglog_slope: f64,
    /// Residual sum of squares of `log ‖x‖_∞` fitted linearly in `log λ`.
    pub poly_rss: f64,
    /// Residual sum of squares of `log ‖x‖_∞` fitted linearly in `λ`.
    pub exp_rss: f64,
    /// True when the ladder was cut short by overflow.
    pub truncated: bool,
}

impl ScalingReport {
    /// The exponential model fits better than the polynomial one.
    pub fn prefers_exponential(&self) -> bool {
        self.exp_rss < self.poly_rss
    }
}

pub fn scaling_experiment(
    coeffs: &CoefficientSet,
    x0: &[f64],
    base_g: &SampledPath,
    ladder: &[f64],
) -> Result<ScalingReport> {
    if ladder.len() < 4 {
        return Err(invalid("λ ladder needs at least 4 points"));
    }
    if ladder.windows(2).any(|w| !(w[0] < w[1])) || !(ladder[0] > 0.0) {
        return Err(invalid("λ ladder must be positive and strictly increasing"));
    }
    let horizon = base_g.grid().horizon();
    let x0_norm = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (mut lambdas, mut sup_norms, mut truncated) = (Vec::new(), Vec::new(), false);
    for &lam in ladder {
        match solve_svie(coeffs, x0, &base_g.scaled(lam)) {
            Ok(x) => {
                let s = sup_norm(&x, 0.0, horizon)?;
                if !s.is_finite() {
                    truncated = true;
                    break;
                }
                lambdas.push(lam);
                sup_norms.push(s);
            }
            Err(Error::NumericOverflow { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if lambdas.len() < 2 {
        return Err(Error::NumericFailure("fewer than two ladder points solved without overflow".into()));
    }
    if sup_norms.iter().any(|s| *s <= 0.0) {
        return Err(Error::DegenerateInput("solution is identically zero on part of the ladder".into()));
    }
    let log_l: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let log_x: Vec<f64> = sup_norms.iter().map(|s| s.ln()).collect();
    let loglog: Vec<f64> = sup_norms.iter().map(|s| (s / (x0_norm + 1.0) + std::f64::consts::E).ln().ln()).collect();
    let (_, poly_slope, poly_rss) = linear_fit(&log_l, &log_x);
    let (_, loglog_slope, _) = linear_fit(&log_l, &loglog);
    let (_, _, exp_rss) = linear_fit(&lambdas, &log_x);
    Ok(ScalingReport { lambdas, sup_norms, poly_slope, loglog_slope, poly_rss, exp_rss, truncated })
}
