//! Fractional Brownian motion for `H > 1/2`: covariance, the Volterra kernel
//! `K_H` and its time derivative, exact Gaussian sampling on a grid, and the
//! inner product of the reproducing Hilbert space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};
use crate::grid::{SampledPath, TimeGrid};
use crate::quadrature::{gl64, gl8};

/// Fractional-order parameters `(H, α, β, δ, μ)` of the solution theory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracParams {
    pub hurst: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub mu: f64,
}

impl FracParams {
    pub fn new(hurst: f64, alpha: f64, beta: f64, delta: f64, mu: f64) -> Result<Self> {
        let p = Self { hurst, alpha, beta, delta, mu };
        let v = p.violations();
        if v.is_empty() {
            Ok(p)
        } else {
            Err(Error::ConfigInvalid(v))
        }
    }

    /// `α₀ = min{1/2, β, δ/(1+δ)}`.
    pub fn alpha_ceiling(&self) -> f64 {
        0.5f64.min(self.beta).min(self.delta / (1.0 + self.delta))
    }

    /// Every admissibility inequality that fails, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let Self { hurst, alpha, beta, delta, mu } = *self;
        if !(hurst > 0.5 && hurst < 1.0) {
            out.push(format!("H must lie in (1/2, 1), got {}", fmt_num(hurst)));
        }
        for (name, v) in [("β", beta), ("δ", delta), ("μ", mu)] {
            if !(v > 0.0 && v <= 1.0) {
                out.push(format!("{name} must lie in (0, 1], got {}", fmt_num(v)));
            }
        }
        if !(alpha > 1.0 - hurst) {
            out.push(format!("α must exceed 1−H={}", fmt_num(1.0 - hurst)));
        }
        if !(alpha > 1.0 - mu) {
            out.push(format!("α must exceed 1−μ={}", fmt_num(1.0 - mu)));
        }
        if !(alpha > 0.0) {
            out.push(format!("α must be positive, got {}", fmt_num(alpha)));
        }
        if !(alpha < 0.5) {
            out.push(format!("α must be below 1/2, got {}", fmt_num(alpha)));
        }
        if !(alpha < beta) {
            out.push(format!("α must be below β={}", fmt_num(beta)));
        }
        let dd = delta / (1.0 + delta);
        if !(alpha < dd) {
            out.push(format!("α must be below δ/(1+δ)={}", fmt_num(dd)));
        }
        out
    }
}

pub(crate) fn fmt_num(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

pub(crate) fn check_hurst(hurst: f64) -> Result<()> {
    if !(hurst > 0.5 && hurst < 1.0) {
        return Err(invalid(format!("Hurst parameter must lie in (1/2, 1), got {hurst}")));
    }
    Ok(())
}

/// `R_H(t,s) = ½ (t^{2H} + s^{2H} − |t−s|^{2H})`.
pub fn covariance_rh(t: f64, s: f64, hurst: f64) -> Result<f64> {
    check_hurst(hurst)?;
    if t < 0.0 || s < 0.0 {
        return Err(invalid(format!("covariance needs non-negative times, got ({t}, {s})")));
    }
    Ok(rh(t, s, hurst))
}

#[inline]
pub(crate) fn rh(t: f64, s: f64, hurst: f64) -> f64 {
    let e = 2.0 * hurst;
    0.5 * (t.powf(e) + s.powf(e) - (t - s).abs().powf(e))
}

/// `c_H = sqrt(H(2H−1) / B(2−2H, H−½))`, with the Beta function from log-Gamma.
pub fn kernel_constant(hurst: f64) -> Result<f64> {
    check_hurst(hurst)?;
    let (a, b) = (2.0 - 2.0 * hurst, hurst - 0.5);
    let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    Ok((hurst * (2.0 * hurst - 1.0)).sqrt() * (-0.5 * ln_beta).exp())
}

/// `K_H(t,s) = c_H s^{1/2−H} ∫_s^t (u−s)^{H−3/2} u^{H−1/2} du`, zero for `t ≤ s`.
///
/// With `v = (u−s)^{H−1/2}` the integral becomes
/// `(H−½)^{-1} ∫_0^{(t−s)^{H−½}} (s + v^{1/(H−½)})^{H−½} dv`, whose integrand
/// is bounded; a 64-point Gauss–Legendre rule is applied to it.
pub fn kernel_kh(t: f64, s: f64, hurst: f64) -> Result<f64> {
    check_hurst(hurst)?;
    if !(s > 0.0) {
        return Err(invalid(format!("K_H(t, s) is singular at s = 0 (got s = {s})")));
    }
    if t <= s {
        return Ok(0.0);
    }
    let c = kernel_constant(hurst)?;
    Ok(c * kernel_tail(t, s, hurst, gl64()))
}

/// `s^{1/2−H} ∫_s^t (u−s)^{H−3/2} u^{H−1/2} du` for `t > s > 0`, also valid for partial ranges.
fn kernel_tail(t: f64, s: f64, hurst: f64, rule: &crate::quadrature::GaussLegendre) -> f64 {
    kernel_segment(s, t, s, hurst, rule)
}

/// `s^{1/2−H} ∫_a^b (u−s)^{H−3/2} u^{H−1/2} du` with `s ≤ a < b`.
fn kernel_segment(a: f64, b: f64, s: f64, hurst: f64, rule: &crate::quadrature::GaussLegendre) -> f64 {
    let e = hurst - 0.5;
    let p = 1.0 / e;
    let (v0, v1) = ((a - s).powf(e), (b - s).powf(e));
    let integral = rule.integrate(v0, v1, |v| (s + v.powf(p)).powf(e));
    s.powf(-e) * integral / e
}

/// `∂_t K_H(t,s) = c_H (t/s)^{H−1/2} (t−s)^{H−3/2}` for `0 < s < t`.
pub fn kernel_kh_dt(t: f64, s: f64, hurst: f64) -> Result<f64> {
    check_hurst(hurst)?;
    if !(s > 0.0) || t <= s {
        return Err(invalid(format!("∂_t K_H(t, s) needs 0 < s < t, got t = {t}, s = {s}")));
    }
    let c = kernel_constant(hurst)?;
    Ok(c * (t / s).powf(hurst - 0.5) * (t - s).powf(hurst - 1.5))
}

/// `∫_0^{t∧s} K_H(t,r) K_H(s,r) dr` by quadrature; reproduces `R_H(t,s)`.
pub fn kernel_covariance(t: f64, s: f64, hurst: f64) -> Result<f64> {
    check_hurst(hurst)?;
    let m = t.min(s);
    if m <= 0.0 {
        return Ok(0.0);
    }
    let c = kernel_constant(hurst)?;
    let product = |r: f64| kernel_tail(t, r, hurst, gl64()) * kernel_tail(s, r, hurst, gl64());
    let rule = gl64();
    let panels = 4;
    let half = 0.5 * m;
    // r = half·w^a flattens the r^{1−2H} singularity at the origin
    let a = 1.0 / (2.0 - 2.0 * hurst);
    // r = m − half·w^b flattens the endpoint behaviour at r = t∧s
    let b = if (t - s).abs() <= 1e-14 * m { 1.0 / (2.0 * hurst) } else { 1.0 / (hurst + 0.5) };
    let mut total = 0.0;
    for p in 0..panels {
        let (w0, w1) = (p as f64 / panels as f64, (p + 1) as f64 / panels as f64);
        total += rule.integrate(w0, w1, |w| {
            let r = half * w.powf(a);
            product(r) * half * a * w.powf(a - 1.0)
        });
        total += rule.integrate(w0, w1, |w| {
            let r = m - half * w.powf(b);
            product(r) * half * b * w.powf(b - 1.0)
        });
    }
    Ok(c * c * total)
}

/// Discretized `(K*_H φ)(s) = ∫_s^T φ(t) ∂_t K_H(t,s) dt` for a scalar path.
///
/// `φ` is read as the step function equal to `φ(t_{k+1})` on `(t_k, t_{k+1}]`;
/// each cell integral of `∂_t K_H(·, s)` is done with the same substitution as
/// [`kernel_kh`]. Intended as a cross-check of the Hilbert-space identities.
pub fn k_star_apply(phi: &SampledPath, s: f64, hurst: f64) -> Result<f64> {
    check_hurst(hurst)?;
    let grid = phi.grid();
    if !(s > 0.0 && s < grid.horizon()) {
        return Err(invalid(format!("K*_H evaluation point must lie in (0, T), got {s}")));
    }
    let c = kernel_constant(hurst)?;
    let mut total = 0.0;
    for k in 0..grid.steps() {
        let (lo, hi) = (grid.node(k), grid.node(k + 1));
        if hi <= s {
            continue;
        }
        let value = phi.at(k + 1)[0];
        if value == 0.0 {
            continue;
        }
        let rule = if lo < s { gl64() } else { gl8() };
        total += value * kernel_segment(lo.max(s), hi, s, hurst, rule);
    }
    Ok(c * total)
}

/// Increment correlation `ρ(k) = ½(|k+1|^{2H} + |k−1|^{2H} − 2|k|^{2H})` of unit-step fBm.
pub(crate) fn increment_correlations(len: usize, hurst: f64) -> Vec<f64> {
    let e = 2.0 * hurst;
    (0..len)
        .map(|k| {
            let k = k as f64;
            0.5 * ((k + 1.0).powf(e) + (k - 1.0).abs().powf(e) - 2.0 * k.powf(e))
        })
        .collect()
}

/// `H(2H−1) ∫∫ a(s) b(r) |r−s|^{2H−2} ds dr` for step functions with cell
/// values `a[p]`, `b[q]` on cells of width `h`; the weight is integrated exactly
/// over each cell pair.
pub(crate) fn step_inner_product(a: &[f64], b: &[f64], h: f64, rho: &[f64], hurst: f64) -> f64 {
    let mut total = 0.0;
    for (p, ap) in a.iter().enumerate() {
        if *ap == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (q, bq) in b.iter().enumerate() {
            row += bq * rho[p.abs_diff(q)];
        }
        total += ap * row;
    }
    total * h.powf(2.0 * hurst)
}

/// `⟨φ, ψ⟩_H = H(2H−1) Σ_j ∫∫ φ^j(s) ψ^j(r) |r−s|^{2H−2} ds dr`.
///
/// Paths are read as step functions with value `φ(t_{k+1})` on `(t_k, t_{k+1}]`,
/// so indicators `1_{[0, t_k]}` sampled at nodes are represented exactly.
pub fn h_inner_product(phi: &SampledPath, psi: &SampledPath, hurst: f64) -> Result<f64> {
    check_hurst(hurst)?;
    phi.check_compatible(psi)?;
    let grid = phi.grid();
    let n = grid.steps();
    let rho = increment_correlations(n + 1, hurst);
    let mut total = 0.0;
    for j in 0..phi.dim() {
        let a: Vec<f64> = (1..=n).map(|k| phi.at(k)[j]).collect();
        let b: Vec<f64> = (1..=n).map(|k| psi.at(k)[j]).collect();
        total += step_inner_product(&a, &b, grid.step(), &rho, hurst);
    }
    Ok(total)
}

/// Independent RNG stream for path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Exact sampler of fBm on the nodes of a grid via a dense Cholesky factor of
/// `[R_H(t_i, t_j)]_{i,j ≥ 1}`. Immutable after construction.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    grid: TimeGrid,
    hurst: f64,
    factor: Vec<f64>,
    jitter: f64,
}

const JITTER_LADDER: [f64; 6] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8];

impl GaussianSampler {
    pub fn new(grid: TimeGrid, hurst: f64) -> Result<Self> {
        check_hurst(hurst)?;
        let n = grid.steps();
        let mut cov = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = rh(grid.node(i + 1), grid.node(j + 1), hurst);
                cov[i * n + j] = v;
                cov[j * n + i] = v;
            }
        }
        for jitter in JITTER_LADDER {
            if let Some(factor) = cholesky(&cov, n, jitter) {
                return Ok(Self { grid, hurst, factor, jitter });
            }
        }
        Err(Error::NumericFailure(format!(
            "covariance Cholesky failed for H = {hurst}, n = {n} even with jitter 1e-8"
        )))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// Diagonal jitter that was needed for the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower-triangular factor, row-major `n × n` over nodes `t_1..t_n`.
    pub fn factor(&self) -> &[f64] {
        &self.factor
    }

    /// Path `index` of the ensemble identified by `seed`; `m` independent components.
    pub fn sample(&self, m: usize, seed: u64, index: u64) -> SampledPath {
        let mut rng = path_rng(seed, index);
        self.sample_with(&mut rng, m)
    }

    pub fn sample_with<R: rand::Rng + ?Sized>(&self, rng: &mut R, m: usize) -> SampledPath {
        let n = self.grid.steps();
        let mut values = vec![0.0; (n + 1) * m];
        let mut z = vec![0.0; n];
        for j in 0..m {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(rng);
            }
            for k in 0..n {
                let row = &self.factor[k * n..k * n + k + 1];
                let w: f64 = row.iter().zip(&z).map(|(l, zi)| l * zi).sum();
                values[(k + 1) * m + j] = w;
            }
        }
        SampledPath::new(self.grid, m, values).expect("Cholesky sample is finite")
    }
}

fn cholesky(a: &[f64], n: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            if i == j {
                sum += jitter;
            }
            let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
            sum -= ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>();
            if i == j {
                if !(sum > 0.0) {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// One fBm path with `m` components on `grid`, determined by `seed`.
pub fn sample_fbm(grid: TimeGrid, hurst: f64, m: usize, seed: u64) -> Result<SampledPath> {
    if m == 0 {
        return Err(invalid("fBm needs at least one component"));
    }
    Ok(GaussianSampler::new(grid, hurst)?.sample(m, seed, 0))
}
