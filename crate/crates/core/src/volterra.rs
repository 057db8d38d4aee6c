//! Two-time explicit Euler scheme for Volterra equations driven by a Hölder
//! path, the auxiliary linear system, and the sensitivity field `Φ_t(s)`.
//!
//! All integrals are left-point sums on the grid of the driver. Because the
//! coefficients depend on the outer time `t`, each node re-evaluates the whole
//! history; coefficients that report
//! [`time_factors`](crate::coefficients::VolterraCoefficients::time_factors)
//! take an `O(n)` path instead.

use rayon::prelude::*;

use crate::coefficients::CoefficientSet;
use crate::error::{invalid, Error, Result};
use crate::grid::{SampledPath, TimeGrid};

fn overflow(t_node: usize, s_node: Option<usize>) -> Error {
    Error::NumericOverflow { t_node, s_node }
}

fn check_driver(coeffs: &CoefficientSet, g: &SampledPath) -> Result<()> {
    if g.dim() != coeffs.noise_dim() {
        return Err(invalid(format!(
            "driver has {} components, coefficients expect {}",
            g.dim(),
            coeffs.noise_dim()
        )));
    }
    Ok(())
}

fn check_state(coeffs: &CoefficientSet, x: &SampledPath, g: &SampledPath) -> Result<()> {
    check_driver(coeffs, g)?;
    if x.grid() != g.grid() {
        return Err(invalid("state and driver live on different grids"));
    }
    if x.dim() != coeffs.state_dim() {
        return Err(invalid(format!("state has {} components, expected {}", x.dim(), coeffs.state_dim())));
    }
    Ok(())
}

fn increments(g: &SampledPath) -> Vec<f64> {
    let m = g.dim();
    let n = g.grid().steps();
    let v = g.values();
    (0..n * m).map(|i| v[i + m] - v[i]).collect()
}

/// `acc += A · v` with `A` stored row-major as `rows × cols`.
#[inline]
fn mat_vec_add(acc: &mut [f64], a: &[f64], v: &[f64], scale: f64) {
    let cols = v.len();
    for (i, out) in acc.iter_mut().enumerate() {
        let row = &a[i * cols..(i + 1) * cols];
        *out += scale * row.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    }
}

/// Solve `x_t = x_0 + ∫_0^t b(t,s,x_s) ds + ∫_0^t σ(t,s,x_s) dg_s` on the grid of `g`.
pub fn solve_svie(coeffs: &CoefficientSet, x0: &[f64], g: &SampledPath) -> Result<SampledPath> {
    check_driver(coeffs, g)?;
    let (d, m) = (coeffs.state_dim(), coeffs.noise_dim());
    if x0.len() != d {
        return Err(invalid(format!("x0 has {} components, expected {d}", x0.len())));
    }
    let grid = *g.grid();
    let n = grid.steps();
    let h = grid.step();
    let dg = increments(g);
    let model = coeffs.model.as_ref();
    let mut xs = vec![0.0; (n + 1) * d];
    xs[..d].copy_from_slice(x0);
    let mut b = vec![0.0; d];
    let mut sig = vec![0.0; d * m];

    if model.time_factors(0.0).is_some() {
        let mut sum_b = vec![0.0; d];
        let mut sum_s = vec![0.0; d];
        for k in 1..=n {
            let j = k - 1;
            let s = grid.node(j);
            let xj = &xs[j * d..(j + 1) * d];
            model.drift(0.0, s, xj, &mut b);
            model.diffusion(0.0, s, xj, &mut sig);
            sum_b.iter_mut().zip(&b).for_each(|(a, v)| *a += v * h);
            mat_vec_add(&mut sum_s, &sig, &dg[j * m..(j + 1) * m], 1.0);
            let (p, q) = model.time_factors(grid.node(k)).expect("separable coefficients");
            for i in 0..d {
                let v = x0[i] + p * sum_b[i] + q * sum_s[i];
                if !v.is_finite() {
                    return Err(overflow(k, None));
                }
                xs[k * d + i] = v;
            }
        }
    } else {
        let mut acc = vec![0.0; d];
        for k in 1..=n {
            let t = grid.node(k);
            acc.copy_from_slice(x0);
            for j in 0..k {
                let s = grid.node(j);
                let xj = &xs[j * d..(j + 1) * d];
                model.drift(t, s, xj, &mut b);
                model.diffusion(t, s, xj, &mut sig);
                acc.iter_mut().zip(&b).for_each(|(a, v)| *a += v * h);
                mat_vec_add(&mut acc, &sig, &dg[j * m..(j + 1) * m], 1.0);
            }
            if acc.iter().any(|v| !v.is_finite()) {
                return Err(overflow(k, None));
            }
            xs[k * d..(k + 1) * d].copy_from_slice(&acc);
        }
    }
    SampledPath::new(grid, d, xs)
}

/// Solve `z_t = w_t + ∫ h(t,r,x_r) z_r dr + ∫ f(t,r,x_r) z_r dg_r` along a solved `x`.
pub fn solve_linear_z(coeffs: &CoefficientSet, x: &SampledPath, g: &SampledPath) -> Result<SampledPath> {
    check_state(coeffs, x, g)?;
    let lin = coeffs
        .linear
        .as_ref()
        .ok_or_else(|| invalid("linear system needs h, f and w in the coefficient set"))?;
    if lin.w.grid() != g.grid() || lin.w.dim() != coeffs.state_dim() {
        return Err(invalid("w must be a d-dimensional path on the driver grid"));
    }
    let (d, m) = (coeffs.state_dim(), coeffs.noise_dim());
    let grid = *g.grid();
    let n = grid.steps();
    let step = grid.step();
    let dg = increments(g);
    let mut zs = vec![0.0; (n + 1) * d];
    zs[..d].copy_from_slice(lin.w.at(0));
    let mut hm = vec![0.0; d * d];
    let mut fm = vec![0.0; d * d * m];
    let mut fdg = vec![0.0; d * d];
    let mut acc = vec![0.0; d];
    for k in 1..=n {
        let t = grid.node(k);
        acc.copy_from_slice(lin.w.at(k));
        for j in 0..k {
            let r = grid.node(j);
            let xj = x.at(j);
            let zj = &zs[j * d..(j + 1) * d];
            lin.coeffs.h(t, r, xj, &mut hm);
            lin.coeffs.f(t, r, xj, &mut fm);
            let dgj = &dg[j * m..(j + 1) * m];
            for (ik, out) in fdg.iter_mut().enumerate() {
                *out = fm[ik * m..(ik + 1) * m].iter().zip(dgj).map(|(a, b)| a * b).sum();
            }
            mat_vec_add(&mut acc, &hm, zj, step);
            mat_vec_add(&mut acc, &fdg, zj, 1.0);
        }
        if acc.iter().any(|v| !v.is_finite()) {
            return Err(overflow(k, None));
        }
        zs[k * d..(k + 1) * d].copy_from_slice(&acc);
    }
    SampledPath::new(grid, d, zs)
}

/// Lower-triangular field of `d × m` matrices `Φ_{t_k}(t_p)`, zero for `p > k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityField {
    grid: TimeGrid,
    d: usize,
    m: usize,
    /// `columns[p]` holds `Φ_{t_k}(t_p)` for `k = p..=n`, row-major matrices.
    columns: Vec<Vec<f64>>,
    zero: Vec<f64>,
}

impl SensitivityField {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `(d, m)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.d, self.m)
    }

    /// `Φ_{t_k}(t_p)` as a row-major `d × m` matrix.
    pub fn value(&self, k: usize, p: usize) -> &[f64] {
        if p > k {
            return &self.zero;
        }
        let size = self.d * self.m;
        let off = (k - p) * size;
        &self.columns[p][off..off + size]
    }

    /// Entry `(i, j)` of `Φ_{t_k}(t_p)`.
    pub fn entry(&self, k: usize, p: usize, i: usize, j: usize) -> f64 {
        self.value(k, p)[i * self.m + j]
    }

    /// A field that is zero everywhere.
    pub fn zeros(grid: TimeGrid, d: usize, m: usize) -> Self {
        let n = grid.steps();
        let columns = (0..=n).map(|p| vec![0.0; (n + 1 - p) * d * m]).collect();
        Self { grid, d, m, columns, zero: vec![0.0; d * m] }
    }
}

/// Solve the sensitivity equation
/// `Φ_t(s) = σ(t,s,x_s) + ∫_s^t ∂_xσ(t,u,x_u) Φ_u(s) dg_u + ∫_s^t ∂_xb(t,u,x_u) Φ_u(s) du`
/// for every grid node `s`. The discretisation is the exact Jacobian of
/// [`solve_svie`] with respect to the driver increments.
pub fn solve_sensitivity_field(coeffs: &CoefficientSet, x: &SampledPath, g: &SampledPath) -> Result<SensitivityField> {
    check_state(coeffs, x, g)?;
    let (d, m) = (coeffs.state_dim(), coeffs.noise_dim());
    let grid = *g.grid();
    let n = grid.steps();
    let h = grid.step();
    let dg = increments(g);
    let model = coeffs.model.as_ref();

    // Jacobian of the one-step contribution: ∂_x b · h + Σ_l ∂_x σ^{·l} Δg^l.
    let step_jacobian = |t: f64, q: usize, out: &mut [f64], jb: &mut [f64], js: &mut [f64]| {
        let s = grid.node(q);
        model.drift_jacobian(t, s, x.at(q), jb);
        model.diffusion_jacobian(t, s, x.at(q), js);
        let dgq = &dg[q * m..(q + 1) * m];
        for i in 0..d {
            for k in 0..d {
                let mut v = jb[i * d + k] * h;
                for l in 0..m {
                    v += js[(i * m + l) * d + k] * dgq[l];
                }
                out[i * d + k] = v;
            }
        }
    };

    let size = d * m;
    let separable = model.time_factors(0.0).is_some();
    let columns: Vec<Result<Vec<f64>>> = if separable {
        let factors: Vec<(f64, f64)> = (0..=n).map(|k| model.time_factors(grid.node(k)).unwrap()).collect();
        // Drift and diffusion parts kept apart so the time factors can be applied per row.
        let mut mb = vec![0.0; (n + 1) * d * d];
        let mut ms = vec![0.0; (n + 1) * d * d];
        let mut jb = vec![0.0; d * d];
        let mut js = vec![0.0; d * m * d];
        for q in 1..n {
            let s = grid.node(q);
            model.drift_jacobian(0.0, s, x.at(q), &mut jb);
            model.diffusion_jacobian(0.0, s, x.at(q), &mut js);
            let dgq = &dg[q * m..(q + 1) * m];
            for i in 0..d {
                for k in 0..d {
                    mb[q * d * d + i * d + k] = jb[i * d + k] * h;
                    ms[q * d * d + i * d + k] = (0..m).map(|l| js[(i * m + l) * d + k] * dgq[l]).sum::<f64>();
                }
            }
        }
        (0..=n)
            .into_par_iter()
            .map(|p| {
                let mut col = vec![0.0; (n + 1 - p) * size];
                let mut sig0 = vec![0.0; size];
                model.diffusion(0.0, grid.node(p), x.at(p), &mut sig0);
                let mut sum_b = vec![0.0; size];
                let mut sum_s = vec![0.0; size];
                for k in p..=n {
                    let (pf, qf) = factors[k];
                    let off = (k - p) * size;
                    for e in 0..size {
                        let v = qf * (sig0[e] + sum_s[e]) + pf * sum_b[e];
                        if !v.is_finite() {
                            return Err(overflow(k, Some(p)));
                        }
                        col[off + e] = v;
                    }
                    if k > p && k < n {
                        let phi = &col[off..off + size];
                        for i in 0..d {
                            for j in 0..m {
                                let (mut vb, mut vs) = (0.0, 0.0);
                                for kk in 0..d {
                                    let ph = phi[kk * m + j];
                                    vb += mb[k * d * d + i * d + kk] * ph;
                                    vs += ms[k * d * d + i * d + kk] * ph;
                                }
                                sum_b[i * m + j] += vb;
                                sum_s[i * m + j] += vs;
                            }
                        }
                    }
                }
                Ok(col)
            })
            .collect()
    } else {
        // M(k, q) for 1 ≤ q < k ≤ n, packed by rows of k starting at tri(k − 1).
        let tri = |j: usize| j * j.saturating_sub(1) / 2;
        let dd = d * d;
        let mut mats = vec![0.0; tri(n) * dd];
        mats.par_chunks_mut(dd)
            .enumerate()
            .fold(
                || (vec![0.0; dd], vec![0.0; d * m * d]),
                |(mut jb, mut js), (idx, out)| {
                    // invert idx = tri(k − 1) + (q − 1)
                    let mut j = ((1.0 + (1.0 + 8.0 * idx as f64).sqrt()) / 2.0) as usize;
                    while tri(j) > idx {
                        j -= 1;
                    }
                    while tri(j + 1) <= idx {
                        j += 1;
                    }
                    let (k, q) = (j + 1, idx - tri(j) + 1);
                    step_jacobian(grid.node(k), q, out, &mut jb, &mut js);
                    (jb, js)
                },
            )
            .for_each(drop);
        (0..=n)
            .into_par_iter()
            .map(|p| {
                let mut col = vec![0.0; (n + 1 - p) * size];
                let sp = grid.node(p);
                let xp = x.at(p);
                let mut acc = vec![0.0; size];
                for k in p..=n {
                    model.diffusion(grid.node(k), sp, xp, &mut acc);
                    for q in p + 1..k {
                        let mk = &mats[(tri(k - 1) + q - 1) * dd..(tri(k - 1) + q) * dd];
                        let phi = &col[(q - p) * size..(q - p + 1) * size];
                        for i in 0..d {
                            for kk in 0..d {
                                let a = mk[i * d + kk];
                                if a != 0.0 {
                                    for j in 0..m {
                                        acc[i * m + j] += a * phi[kk * m + j];
                                    }
                                }
                            }
                        }
                    }
                    if acc.iter().any(|v| !v.is_finite()) {
                        return Err(overflow(k, Some(p)));
                    }
                    col[(k - p) * size..(k - p + 1) * size].copy_from_slice(&acc);
                }
                Ok(col)
            })
            .collect()
    };
    let columns = columns.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SensitivityField { grid, d, m, columns, zero: vec![0.0; size] })
}

/// `D_h x_{t_k} = Σ_{p<k} Φ_{t_k}(t_p) (h_{p+1} − h_p)`.
pub fn frechet_direction(field: &SensitivityField, h: &SampledPath) -> Result<SampledPath> {
    let (d, m) = field.dims();
    if h.grid() != field.grid() {
        return Err(invalid("direction and field live on different grids"));
    }
    if h.dim() != m {
        return Err(invalid(format!("direction has {} components, expected {m}", h.dim())));
    }
    let n = field.grid().steps();
    let dh = increments(h);
    let mut out = vec![0.0; (n + 1) * d];
    for k in 1..=n {
        let acc = &mut out[k * d..(k + 1) * d];
        for p in 0..k {
            mat_vec_add(acc, field.value(k, p), &dh[p * m..(p + 1) * m], 1.0);
        }
    }
    SampledPath::new(*field.grid(), d, out)
}

/// Empirical Hölder exponents of `Φ` in `t` and in `s`, from a log-log fit of
/// `sup |Φ_{t+δ}(s) − Φ_t(s)|` (resp. in `s`) over dyadic lags `δ = 2^j h`,
/// `2^j ≤ max_lag`.
pub fn field_holder_exponents(field: &SensitivityField, max_lag: usize) -> Result<(f64, f64)> {
    let n = field.grid().steps();
    if max_lag < 2 || max_lag > n / 2 {
        return Err(invalid("max_lag must lie in [2, n/2]"));
    }
    let h = field.grid().step();
    let norm = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut lags = Vec::new();
    let mut l = 1;
    while l <= max_lag {
        lags.push(l);
        l *= 2;
    }
    let (mut xs, mut yt, mut ys) = (Vec::new(), Vec::new(), Vec::new());
    for &l in &lags {
        let (dt, ds) = (0..=n)
            .into_par_iter()
            .map(|k| {
                let mut dt: f64 = 0.0;
                let mut ds: f64 = 0.0;
                for p in 0..=k {
                    if k + l <= n {
                        dt = dt.max(norm(field.value(k + l, p), field.value(k, p)));
                    }
                    if p + l <= k {
                        ds = ds.max(norm(field.value(k, p + l), field.value(k, p)));
                    }
                }
                (dt, ds)
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
        xs.push((l as f64 * h).ln());
        yt.push(dt.max(f64::MIN_POSITIVE).ln());
        ys.push(ds.max(f64::MIN_POSITIVE).ln());
    }
    let (_, st, _) = crate::quadrature::linear_fit(&xs, &yt);
    let (_, ss, _) = crate::quadrature::linear_fit(&xs, &ys);
    Ok((st, ss))
}
