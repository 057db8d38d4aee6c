//! Uniform time grids, sampled vector paths, and discrete estimators of the
//! sup, Hölder, `W^α_1` and `W^{1-α}_2` norms.
//!
//! Every norm here is a grid estimator: suprema run over grid nodes only, so
//! the values are lower bounds of the continuum quantities. Singular
//! integrals are evaluated exactly against the piecewise-linear interpolant
//! of the path.

use crate::error::{invalid, Error, Result};
use crate::singular::{euclid, weighted_piece_norm, NegPow};

/// Uniform partition `t_k = k T / n`, `k = 0..=n`, of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("time horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(invalid("number of subintervals must be at least 1"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of subintervals `n`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `n + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }

    /// Index of the node nearest to `t`, clamped to the grid.
    pub fn snap(&self, t: f64) -> usize {
        let k = (t / self.step()).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.steps)
        }
    }

    /// Index of the node equal to `t` (to rounding), or an error.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = self.snap(t);
        if (self.node(k) - t).abs() <= 1e-9 * self.step() && t >= -1e-12 && t <= self.horizon * (1.0 + 1e-12) {
            Ok(k)
        } else {
            Err(invalid(format!("time {t} is not a node of the grid")))
        }
    }

    fn node_range(&self, a: f64, b: f64) -> Result<(usize, usize)> {
        if !(a.is_finite() && b.is_finite()) || a < -1e-12 || b > self.horizon * (1.0 + 1e-12) || a >= b {
            return Err(invalid(format!("interval [{a}, {b}] is not a subinterval of [0, {}]", self.horizon)));
        }
        let lo = self.snap(a);
        let hi = self.snap(b);
        if lo > hi {
            return Err(invalid(format!("no grid nodes in [{a}, {b}]")));
        }
        Ok((lo, hi))
    }
}

/// Build a uniform grid on `[0, horizon]` with `steps` subintervals.
pub fn make_uniform_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::uniform(horizon, steps)
}

/// Vector-valued path sampled at the nodes of a [`TimeGrid`]; values are
/// stored node-major, `dim` entries per node.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl SampledPath {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("path dimension must be positive"));
        }
        if values.len() != grid.len() * dim {
            return Err(invalid(format!(
                "path needs {} values ({} nodes x dim {}), got {}",
                grid.len() * dim,
                grid.len(),
                dim,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow { t_node: pos / dim, s_node: None });
        }
        Ok(Self { grid, dim, values })
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self { grid, dim, values: vec![0.0; grid.len() * dim] }
    }

    /// Sample `f(t, out)` at every node.
    pub fn from_fn<F: FnMut(f64, &mut [f64])>(grid: TimeGrid, dim: usize, mut f: F) -> Result<Self> {
        let mut values = vec![0.0; grid.len() * dim];
        for (k, chunk) in values.chunks_mut(dim).enumerate() {
            f(grid.node(k), chunk);
        }
        Self::new(grid, dim, values)
    }

    pub fn scalar_from_fn<F: FnMut(f64) -> f64>(grid: TimeGrid, mut f: F) -> Result<Self> {
        Self::from_fn(grid, 1, |t, out| out[0] = f(t))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn component(&self, j: usize) -> Vec<f64> {
        self.values.iter().skip(j).step_by(self.dim).copied().collect()
    }

    /// Value of the piecewise-linear interpolant at `t ∈ [0, T]`.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let h = self.grid.step();
        let n = self.grid.steps();
        let pos = (t / h).clamp(0.0, n as f64);
        let k = (pos.floor() as usize).min(n - 1);
        let w = pos - k as f64;
        let (a, b) = (self.at(k), self.at(k + 1));
        for i in 0..self.dim {
            out[i] = a[i] + w * (b[i] - a[i]);
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { grid: self.grid, dim: self.dim, values: self.values.iter().map(|v| c * v).collect() }
    }

    /// `self + c · other`.
    pub fn add_scaled(&self, other: &SampledPath, c: f64) -> Result<Self> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect();
        Self::new(self.grid, self.dim, values)
    }

    pub(crate) fn check_compatible(&self, other: &SampledPath) -> Result<()> {
        if self.grid != other.grid {
            return Err(invalid("paths live on different grids"));
        }
        if self.dim != other.dim {
            return Err(invalid(format!("path dimensions differ: {} vs {}", self.dim, other.dim)));
        }
        Ok(())
    }
}

/// Which discrete norm to evaluate over the whole grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    WAlpha1(f64),
    W1MinusAlpha2(f64),
    Holder(f64),
    Sup,
}

pub fn norm(path: &SampledPath, kind: NormKind) -> Result<f64> {
    let t = path.grid().horizon();
    match kind {
        NormKind::WAlpha1(alpha) => w_alpha_1_norm(path, alpha),
        NormKind::W1MinusAlpha2(alpha) => w_1malpha_2_norm(path, alpha),
        NormKind::Holder(lambda) => holder_norm(path, lambda, 0.0, t),
        NormKind::Sup => sup_norm(path, 0.0, t),
    }
}

/// `max |f(t_k)|` over nodes in `[a, b]` (endpoints snapped to the grid).
pub fn sup_norm(path: &SampledPath, a: f64, b: f64) -> Result<f64> {
    let (lo, hi) = path.grid().node_range(a, b)?;
    Ok((lo..=hi).map(|k| euclid(path.at(k))).fold(0.0, f64::max))
}

/// Maximal Hölder quotient over node pairs in `[a, b]`, without the sup part.
pub fn holder_seminorm(path: &SampledPath, lambda: f64, a: f64, b: f64) -> Result<f64> {
    check_open_unit("Hölder exponent", lambda, true)?;
    let (lo, hi) = path.grid().node_range(a, b)?;
    if hi <= lo {
        return Err(invalid("Hölder norm needs at least two nodes in the interval"));
    }
    let h = path.grid().step();
    let span = hi - lo;
    let inv_pow: Vec<f64> = (0..=span).map(|l| if l == 0 { 0.0 } else { (l as f64 * h).powf(-lambda) }).collect();
    let dim = path.dim();
    let mut best = 0.0f64;
    for i in lo..hi {
        let fi = path.at(i);
        for j in (i + 1)..=hi {
            let fj = path.at(j);
            let d2: f64 = (0..dim).map(|c| (fj[c] - fi[c]) * (fj[c] - fi[c])).sum();
            best = best.max(d2.sqrt() * inv_pow[j - i]);
        }
    }
    Ok(best)
}

/// `‖f‖_{a,b,λ}`: sup norm plus the maximal Hölder quotient over node pairs.
pub fn holder_norm(path: &SampledPath, lambda: f64, a: f64, b: f64) -> Result<f64> {
    let semi = holder_seminorm(path, lambda, a, b)?;
    Ok(sup_norm(path, a, b)? + semi)
}

/// `sup_t ( |f(t)| + ∫_0^t |f(t) - f(s)| / (t-s)^{α+1} ds )` over grid nodes.
pub fn w_alpha_1_norm(path: &SampledPath, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let grid = path.grid();
    let n = grid.steps();
    let h = grid.step();
    let pw = NegPow::tabulated(alpha, h, n + 2);
    let dim = path.dim();
    let mut d0 = vec![0.0; dim];
    let mut d1 = vec![0.0; dim];
    let mut best = 0.0f64;
    for k in 0..=n {
        let fk = path.at(k);
        let mut acc = euclid(fk);
        // cell [t_j, t_{j+1}] maps to u ∈ [(k-j-1)h, (k-j)h]
        for j in 0..k {
            let near = path.at(j + 1);
            let far = path.at(j);
            for c in 0..dim {
                d0[c] = fk[c] - near[c];
                d1[c] = fk[c] - far[c];
            }
            let u0 = (k - j - 1) as f64 * h;
            let u1 = (k - j) as f64 * h;
            acc += weighted_piece_norm(u0, u1, &d0, &d1, &pw);
        }
        best = best.max(acc);
    }
    Ok(best)
}

/// `sup_{s<t} ( |g(t)-g(s)|/(t-s)^{1-α} + ∫_s^t |g(y)-g(s)|/(y-s)^{2-α} dy )` over node pairs.
pub fn w_1malpha_2_norm(path: &SampledPath, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let grid = path.grid();
    let n = grid.steps();
    let h = grid.step();
    let theta = 1.0 - alpha;
    let pw = NegPow::tabulated(theta, h, n + 2);
    let dim = path.dim();
    let mut d0 = vec![0.0; dim];
    let mut d1 = vec![0.0; dim];
    let mut best = 0.0f64;
    for s in 0..n {
        let gs = path.at(s);
        let mut integral = 0.0;
        for t in (s + 1)..=n {
            let (prev, cur) = (path.at(t - 1), path.at(t));
            for c in 0..dim {
                d0[c] = prev[c] - gs[c];
                d1[c] = cur[c] - gs[c];
            }
            let u0 = (t - 1 - s) as f64 * h;
            let u1 = (t - s) as f64 * h;
            integral += weighted_piece_norm(u0, u1, &d0, &d1, &pw);
            // u^{-θ} with θ = 1-α is the Hölder weight
            let quotient = euclid(&d1) * pw.get(u1);
            best = best.max(quotient + integral);
        }
    }
    Ok(best)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid(format!("α must lie in (0, 1/2), got {alpha}")));
    }
    Ok(())
}

pub(crate) fn check_open_unit(name: &str, v: f64, closed_right: bool) -> Result<()> {
    let ok = v > 0.0 && if closed_right { v <= 1.0 } else { v < 1.0 };
    if !ok {
        let bracket = if closed_right { "(0, 1]" } else { "(0, 1)" };
        return Err(invalid(format!("{name} must lie in {bracket}, got {v}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn line(t_end: f64, n: usize) -> SampledPath {
        SampledPath::scalar_from_fn(TimeGrid::uniform(t_end, n).unwrap(), |t| t).unwrap()
    }

    #[test]
    fn uniform_grid_nodes() {
        let g = make_uniform_grid(1.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(make_uniform_grid(2.0, 1).unwrap().nodes(), vec![0.0, 2.0]);
        assert!(matches!(make_uniform_grid(0.0, 4), Err(Error::InvalidArgument(_))));
        assert!(make_uniform_grid(1.0, 0).is_err());
        assert!(make_uniform_grid(-1.0, 3).is_err());
    }

    #[test]
    fn rejects_non_finite_values() {
        let g = TimeGrid::uniform(1.0, 2).unwrap();
        let err = SampledPath::new(g, 1, vec![0.0, f64::NAN, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NumericOverflow { t_node: 1, .. }));
    }

    #[test]
    fn sup_norm_examples() {
        let g = TimeGrid::uniform(1.0, 100).unwrap();
        let c = SampledPath::scalar_from_fn(g, |_| 3.0).unwrap();
        assert_eq!(sup_norm(&c, 0.0, 1.0).unwrap(), 3.0);
        assert_eq!(sup_norm(&line(1.0, 100), 0.0, 1.0).unwrap(), 1.0);
        let g = TimeGrid::uniform(1.0, 1024).unwrap();
        let s = SampledPath::scalar_from_fn(g, |t| (2.0 * PI * t).sin()).unwrap();
        assert!((sup_norm(&s, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-4);
        assert!(sup_norm(&s, 0.5, 0.5).is_err());
    }

    #[test]
    fn holder_norm_examples() {
        let g = TimeGrid::uniform(1.0, 64).unwrap();
        let c = SampledPath::scalar_from_fn(g, |_| -2.5).unwrap();
        assert_eq!(holder_norm(&c, 0.3, 0.0, 1.0).unwrap(), 2.5);
        assert!((holder_norm(&line(1.0, 64), 0.5, 0.0, 1.0).unwrap() - 2.0).abs() < 1e-12);
        let v = holder_norm(&line(2.0, 64), 0.5, 0.0, 2.0).unwrap();
        assert!((v - (2.0 + 2f64.sqrt())).abs() < 1e-12);
        assert!(holder_norm(&c, 0.0, 0.0, 1.0).is_err());
        assert!(holder_norm(&c, 1.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn w_alpha_1_examples() {
        let g = TimeGrid::uniform(1.0, 128).unwrap();
        let c = SampledPath::scalar_from_fn(g, |_| -4.0).unwrap();
        assert_eq!(w_alpha_1_norm(&c, 0.25).unwrap(), 4.0);
        let v = w_alpha_1_norm(&line(1.0, 128), 0.25).unwrap();
        assert!((v - (1.0 + 1.0 / 0.75)).abs() < 1e-12, "{v}");
        let v = w_alpha_1_norm(&line(1.0, 128), 0.4).unwrap();
        assert!((v - (1.0 + 1.0 / 0.6)).abs() < 1e-12, "{v}");
        assert!(w_alpha_1_norm(&c, 0.5).is_err());
    }

    #[test]
    fn w_1malpha_2_examples() {
        let g = TimeGrid::uniform(1.0, 128).unwrap();
        let c = SampledPath::scalar_from_fn(g, |_| 7.0).unwrap();
        assert_eq!(w_1malpha_2_norm(&c, 0.25).unwrap(), 0.0);
        for t_end in [1.0, 2.0, 0.5] {
            let v = w_1malpha_2_norm(&line(t_end, 128), 0.25).unwrap();
            let expected = t_end.powf(0.25) * 5.0;
            assert!((v - expected).abs() < 1e-11 * expected, "{v} vs {expected}");
        }
        let v = w_1malpha_2_norm(&line(1.0, 128), 0.4).unwrap();
        assert!((v - 3.5).abs() < 1e-12);
        assert!(w_1malpha_2_norm(&c, 0.0).is_err());
    }

    #[test]
    fn singular_integral_handles_sign_changes() {
        // brute-force the W^α_1 integral for a non-monotone path at the last node
        let n = 16;
        let g = TimeGrid::uniform(1.0, n).unwrap();
        let f = |t: f64| (5.0 * t).sin();
        let p = SampledPath::scalar_from_fn(g, f).unwrap();
        let alpha = 0.3;
        let mut interp = [0.0];
        let steps = 400_000;
        let du = 1.0 / steps as f64;
        let mut brute = f(1.0).abs();
        for i in 0..steps {
            let s = (i as f64 + 0.5) * du;
            p.interpolate(s, &mut interp);
            brute += (f(1.0) - interp[0]).abs() / (1.0 - s).powf(1.0 + alpha) * du;
        }
        // the last node carries the largest value here
        let v = w_alpha_1_norm(&p, alpha).unwrap();
        assert!(v >= brute - 2e-3, "{v} vs {brute}");
    }

    #[test]
    fn inclusion_chain_on_smooth_paths() {
        let g = TimeGrid::uniform(1.0, 256).unwrap();
        for (alpha, f) in [(0.3, (|t: f64| (3.0 * t).sin()) as fn(f64) -> f64), (0.2, |t: f64| t * t - t)] {
            let p = SampledPath::scalar_from_fn(g, f).unwrap();
            let lhs = holder_norm(&p, 1.0 - alpha, 0.0, 1.0).unwrap();
            let rhs = w_1malpha_2_norm(&p, alpha).unwrap() + sup_norm(&p, 0.0, 1.0).unwrap();
            assert!(lhs <= rhs + 1e-12);
            assert!(w_alpha_1_norm(&p, alpha).unwrap().is_finite());
        }
    }

    #[test]
    fn holder_monotone_in_exponent_on_unit_interval() {
        let p = line(1.0, 64);
        let mut prev = f64::INFINITY;
        for lambda in [0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
            let v = holder_seminorm(&p, lambda, 0.0, 1.0).unwrap();
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    proptest! {
        #[test]
        fn norms_are_absolutely_homogeneous(c in -5.0f64..5.0, a in 0.5f64..3.0, w in 1.0f64..9.0) {
            let g = TimeGrid::uniform(1.0, 32).unwrap();
            let p = SampledPath::scalar_from_fn(g, |t| a * (w * t).sin() + t).unwrap();
            let q = p.scaled(c);
            for kind in [NormKind::Sup, NormKind::Holder(0.6), NormKind::WAlpha1(0.3), NormKind::W1MinusAlpha2(0.3)] {
                let lhs = norm(&q, kind).unwrap();
                let rhs = c.abs() * norm(&p, kind).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1.0));
            }
        }

        #[test]
        fn refinement_does_not_decrease_sup_estimators(a in 0.5f64..3.0, w in 1.0f64..20.0) {
            let f = |t: f64| a * (w * t).sin() + t * t;
            let mut prev_sup = 0.0;
            let mut prev_holder = 0.0;
            for n in [16, 32, 64, 128] {
                let p = SampledPath::scalar_from_fn(TimeGrid::uniform(1.0, n).unwrap(), f).unwrap();
                let s = sup_norm(&p, 0.0, 1.0).unwrap();
                let hn = holder_norm(&p, 0.7, 0.0, 1.0).unwrap();
                prop_assert!(s >= prev_sup - 1e-12 && hn >= prev_holder - 1e-12);
                prev_sup = s;
                prev_holder = hn;
            }
        }
    }
}
