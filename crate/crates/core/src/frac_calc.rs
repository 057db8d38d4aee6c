//! One-sided fractional derivatives and the generalized Stieltjes integral
//! `∫_a^b f dg` written through them, together with the plain left-point
//! Riemann–Stieltjes sum used as an independent check.
//!
//! All singular integrals are exact against the piecewise-linear interpolant
//! of the sampled path. The complex phases `(−1)^α` of the right-sided
//! derivative are not carried: [`frac_deriv_right`] returns the real part
//! without phase, and [`rs_integral_forpart`] applies the product of the two
//! phases, `(−1)^α · (−1)^{1−α} = −1`, explicitly.

use statrs::function::gamma::gamma;

use crate::error::{invalid, Result};
use crate::grid::{check_open_unit, SampledPath};
use crate::singular::{weighted_piece, NegPow};

/// Which end of `[a, b]` a fractional derivative is anchored at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    LeftAPlus,
    RightBMinus,
}

/// Order, side and interval of a fractional derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracDerivSpec {
    pub side: Side,
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
}

impl FracDerivSpec {
    pub fn new(side: Side, alpha: f64, a: f64, b: f64) -> Result<Self> {
        check_open_unit("fractional order", alpha, false)?;
        if !(a < b) {
            return Err(invalid(format!("fractional derivative needs a < b, got [{a}, {b}]")));
        }
        Ok(Self { side, alpha, a, b })
    }

    /// Evaluate at `t`; the right-sided variant acts on `f − f(b)`.
    pub fn apply(&self, f: &SampledPath, t: f64) -> Result<Vec<f64>> {
        match self.side {
            Side::LeftAPlus => frac_deriv_left(f, self.a, self.alpha, t),
            Side::RightBMinus => frac_deriv_right(f, self.b, self.alpha, t),
        }
    }
}

/// `D^α_{a+} f(t) = (1/Γ(1−α)) ( f(t)/(t−a)^α + α ∫_a^t (f(t)−f(s))/(t−s)^{α+1} ds )`.
pub fn frac_deriv_left(f: &SampledPath, a: f64, alpha: f64, t: f64) -> Result<Vec<f64>> {
    check_open_unit("fractional order", alpha, false)?;
    let horizon = f.grid().horizon();
    if !(a >= 0.0 && t > a && t <= horizon * (1.0 + 1e-12)) {
        return Err(invalid(format!("left derivative needs 0 ≤ a < t ≤ T, got a = {a}, t = {t}")));
    }
    let mut out = vec![0.0; f.dim()];
    let pw = NegPow::direct(alpha);
    left_into(f, a, t, &pw, 1.0 / gamma(1.0 - alpha), &mut out);
    Ok(out)
}

/// Phase-free `D^α_{b−} g_{b−}(t)` with `g_{b−} = g − g(b)`:
/// `(1/Γ(1−α)) ( g_{b−}(t)/(b−t)^α + α ∫_t^b (g(t)−g(s))/(s−t)^{α+1} ds )`.
pub fn frac_deriv_right(g: &SampledPath, b: f64, alpha: f64, t: f64) -> Result<Vec<f64>> {
    check_open_unit("fractional order", alpha, false)?;
    let horizon = g.grid().horizon();
    if !(b <= horizon * (1.0 + 1e-12) && t >= 0.0 && t < b) {
        return Err(invalid(format!("right derivative needs 0 ≤ t < b ≤ T, got t = {t}, b = {b}")));
    }
    let mut out = vec![0.0; g.dim()];
    let pw = NegPow::direct(alpha);
    right_into(g, b, t, &pw, 1.0 / gamma(1.0 - alpha), &mut out);
    Ok(out)
}

/// Breakpoints of the interpolant strictly inside `(lo, hi)`.
fn interior_nodes(f: &SampledPath, lo: f64, hi: f64) -> std::ops::Range<usize> {
    let h = f.grid().step();
    let tol = 1e-9 * h;
    let first = ((lo + tol) / h).floor() as usize + 1;
    let last_excl = ((hi - tol) / h).ceil().max(0.0) as usize;
    first..last_excl.max(first)
}

fn left_into(f: &SampledPath, a: f64, t: f64, pw: &NegPow, inv_gamma: f64, out: &mut [f64]) {
    let dim = f.dim();
    let alpha = pw.theta();
    let mut ft = vec![0.0; dim];
    let mut fa = vec![0.0; dim];
    f.interpolate(t, &mut ft);
    f.interpolate(a, &mut fa);
    let boundary = pw.get(t - a);
    let mut integral = vec![0.0; dim];
    // walk pieces from s = t backwards to s = a
    let mut s_hi = t;
    let mut v_hi: Vec<f64> = ft.clone();
    let nodes = interior_nodes(f, a, t);
    let mut push_piece = |s_lo: f64, v_lo: &[f64], s_hi: f64, v_hi: &[f64]| {
        let (u0, u1) = (t - s_hi, t - s_lo);
        for c in 0..dim {
            integral[c] += weighted_piece(u0, u1, ft[c] - v_hi[c], ft[c] - v_lo[c], pw);
        }
    };
    for k in nodes.rev() {
        let s_lo = f.grid().node(k);
        let v_lo = f.at(k);
        push_piece(s_lo, v_lo, s_hi, &v_hi);
        s_hi = s_lo;
        v_hi.copy_from_slice(v_lo);
    }
    push_piece(a, &fa, s_hi, &v_hi);
    for c in 0..dim {
        out[c] = inv_gamma * (ft[c] * boundary + alpha * integral[c]);
    }
}

fn right_into(g: &SampledPath, b: f64, t: f64, pw: &NegPow, inv_gamma: f64, out: &mut [f64]) {
    let dim = g.dim();
    let alpha = pw.theta();
    let mut gt = vec![0.0; dim];
    let mut gb = vec![0.0; dim];
    g.interpolate(t, &mut gt);
    g.interpolate(b, &mut gb);
    let boundary = pw.get(b - t);
    let mut integral = vec![0.0; dim];
    let mut s_lo = t;
    let mut v_lo: Vec<f64> = gt.clone();
    let nodes = interior_nodes(g, t, b);
    let mut push_piece = |s_lo: f64, v_lo: &[f64], s_hi: f64, v_hi: &[f64]| {
        let (u0, u1) = (s_lo - t, s_hi - t);
        for c in 0..dim {
            integral[c] += weighted_piece(u0, u1, gt[c] - v_lo[c], gt[c] - v_hi[c], pw);
        }
    };
    for k in nodes {
        let s_hi = g.grid().node(k);
        let v_hi = g.at(k);
        push_piece(s_lo, &v_lo, s_hi, v_hi);
        s_lo = s_hi;
        v_lo.copy_from_slice(v_hi);
    }
    push_piece(s_lo, &v_lo, b, &gb);
    for c in 0..dim {
        out[c] = inv_gamma * ((gt[c] - gb[c]) * boundary + alpha * integral[c]);
    }
}

/// Map output component `j` to the integrand component it pairs with.
fn pairing(f: &SampledPath, g: &SampledPath) -> Result<usize> {
    if f.grid() != g.grid() {
        return Err(invalid("integrand and integrator live on different grids"));
    }
    if f.dim() == g.dim() || f.dim() == 1 {
        Ok(g.dim())
    } else {
        Err(invalid(format!(
            "integrand dimension {} must be 1 or equal the integrator dimension {}",
            f.dim(),
            g.dim()
        )))
    }
}

fn node_bounds(f: &SampledPath, a: f64, b: f64) -> Result<(usize, usize)> {
    let grid = f.grid();
    let (ka, kb) = (grid.index_of(a)?, grid.index_of(b)?);
    if ka >= kb {
        return Err(invalid(format!("integration interval [{a}, {b}] is empty")));
    }
    Ok((ka, kb))
}

/// `∫_a^b f dg` through fractional integration by parts,
/// `−∫_a^b D^α_{a+} f(t) · D^{1−α}_{b−} g_{b−}(t) dt`, using the composite
/// midpoint rule over grid cells. The singular boundary term
/// `f(a)(t−a)^{−α}` is weighted exactly per cell. `a` and `b` must be grid nodes.
///
/// Output component `j` is `∫ f^j dg^j`, or `∫ f dg^j` for scalar `f`.
pub fn rs_integral_forpart(f: &SampledPath, g: &SampledPath, a: f64, b: f64, alpha: f64) -> Result<Vec<f64>> {
    let dim = pairing(f, g)?;
    check_open_unit("fractional order", alpha, false)?;
    let (ka, kb) = node_bounds(f, a, b)?;
    let grid = f.grid();
    let h = grid.step();
    let (a, b) = (grid.node(ka), grid.node(kb));
    let len = 2 * (kb - ka) + 4;
    let pw_left = NegPow::tabulated(alpha, 0.5 * h, len);
    let pw_right = NegPow::tabulated(1.0 - alpha, 0.5 * h, len);
    let (gl, gr) = (1.0 / gamma(1.0 - alpha), 1.0 / gamma(alpha));
    let mut df = vec![0.0; f.dim()];
    let mut dg = vec![0.0; dim];
    let mut total = vec![0.0; dim];
    let fa = f.at(ka).to_vec();
    for k in ka..kb {
        let mid = grid.node(k) + 0.5 * h;
        left_into(f, a, mid, &pw_left, gl, &mut df);
        right_into(g, b, mid, &pw_right, gr, &mut dg);
        // the f(a)(t−a)^{−α} part of the left derivative gets exact cell weights
        let (u0, u1) = ((k - ka) as f64 * h, (k + 1 - ka) as f64 * h);
        let exact_weight = gl * (u1.powf(1.0 - alpha) - u0.powf(1.0 - alpha)) / (1.0 - alpha);
        let mid_weight = gl * h * pw_left.get(mid - a);
        for j in 0..dim {
            let c = if f.dim() == 1 { 0 } else { j };
            let cell = h * df[c] + fa[c] * (exact_weight - mid_weight);
            total[j] -= cell * dg[j];
        }
    }
    Ok(total)
}

/// Left-point sum `Σ f(t_k)(g(t_{k+1}) − g(t_k))` over nodes in `[a, b]`.
pub fn rs_integral_sums(f: &SampledPath, g: &SampledPath, a: f64, b: f64) -> Result<Vec<f64>> {
    let dim = pairing(f, g)?;
    let (ka, kb) = node_bounds(f, a, b)?;
    let mut total = vec![0.0; dim];
    for k in ka..kb {
        let (fk, g0, g1) = (f.at(k), g.at(k), g.at(k + 1));
        for j in 0..dim {
            let fj = if f.dim() == 1 { fk[0] } else { fk[j] };
            total[j] += fj * (g1[j] - g0[j]);
        }
    }
    Ok(total)
}

/// Default fractional order for integrating against an fBm-like driver of
/// Hurst index `hurst`: `1.2 (1 − H)`, kept inside `(1 − H, 1/2)`.
pub fn default_alpha(hurst: f64) -> f64 {
    let lo = 1.0 - hurst;
    let candidate = 1.2 * lo;
    if candidate < 0.5 {
        candidate
    } else {
        0.5 * (lo + 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::sample_fbm;
    use crate::grid::TimeGrid;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn path(n: usize, f: fn(f64) -> f64) -> SampledPath {
        SampledPath::scalar_from_fn(TimeGrid::uniform(1.0, n).unwrap(), f).unwrap()
    }

    #[test]
    fn left_derivative_examples() {
        let one = path(64, |_| 1.0);
        let v = frac_deriv_left(&one, 0.0, 0.5, 1.0).unwrap()[0];
        assert!((v - 1.0 / PI.sqrt()).abs() < 1e-12);
        let lin = path(64, |t| t);
        let v = frac_deriv_left(&lin, 0.0, 0.5, 1.0).unwrap()[0];
        assert!((v - std::f64::consts::FRAC_2_SQRT_PI).abs() < 1e-12);
        // off-node evaluation point
        let v = frac_deriv_left(&lin, 0.0, 0.3, 0.4321).unwrap()[0];
        assert!((v - 0.4321f64.powf(0.7) / gamma(1.7)).abs() < 1e-12);
        let zero = path(64, |_| 0.0);
        assert_eq!(frac_deriv_left(&zero, 0.0, 0.4, 0.5).unwrap()[0], 0.0);
        assert!(frac_deriv_left(&lin, 0.5, 0.4, 0.5).is_err());
        assert!(frac_deriv_left(&lin, 0.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn right_derivative_examples() {
        let c = path(64, |_| 3.0);
        assert_eq!(frac_deriv_right(&c, 1.0, 0.4, 0.2).unwrap()[0], 0.0);
        let refl = path(64, |t| 1.0 - t);
        for t in [0.0, 0.3, 0.77] {
            let v = frac_deriv_right(&refl, 1.0, 0.4, t).unwrap()[0];
            let want = (1.0 - t).powf(0.6) / gamma(1.6);
            assert!((v.abs() - want).abs() < 1e-12, "{v} vs {want}");
        }
        let s = path(512, f64::sin);
        let t = 0.4;
        let v = frac_deriv_right(&s, 1.0, 0.01, t).unwrap()[0];
        let target = t.sin() - 1f64.sin();
        assert!((v / target - 1.0).abs() < 0.05, "{v} vs {target}");
        assert!(frac_deriv_right(&s, 1.0, 0.3, 1.0).is_err());
    }

    #[test]
    fn sums_examples() {
        let g = path(100, |t| t * t);
        let c = path(100, |_| 2.5);
        let v = rs_integral_sums(&c, &g, 0.0, 1.0).unwrap()[0];
        assert!((v - 2.5).abs() < 1e-14);
        let flat = path(100, |_| 4.0);
        assert_eq!(rs_integral_sums(&g, &flat, 0.0, 1.0).unwrap()[0], 0.0);
        let lin = path(1000, |t| t);
        let v = rs_integral_sums(&lin, &lin, 0.0, 1.0).unwrap()[0];
        assert!((v - 0.4995).abs() < 1e-12);
        let other = SampledPath::zeros(TimeGrid::uniform(2.0, 100).unwrap(), 1);
        assert!(rs_integral_sums(&g, &other, 0.0, 1.0).is_err());
    }

    #[test]
    fn forpart_constant_integrand_telescopes() {
        let g = path(4096, |t| t * t);
        let one = path(4096, |_| 1.0);
        let v = rs_integral_forpart(&one, &g, 0.0, 1.0, 0.3).unwrap()[0];
        assert!((v - 1.0).abs() < 1e-3, "{v}");
    }

    #[test]
    fn forpart_chain_rule() {
        let g = path(4096, f64::sin);
        let v = rs_integral_forpart(&g, &g, 0.0, 1.0, 0.3).unwrap()[0];
        assert!((v - 0.354_036_709_136_785_6).abs() < 1e-3, "{v}");
    }

    #[test]
    fn forpart_agrees_with_sums_on_fbm() {
        let grid = TimeGrid::uniform(1.0, 1024).unwrap();
        let w = sample_fbm(grid, 0.75, 1, 2024).unwrap();
        let f = SampledPath::from_fn(grid, 1, |t, out| {
            let mut v = [0.0];
            w.interpolate(t, &mut v);
            out[0] = v[0].cos();
        })
        .unwrap();
        let a = rs_integral_forpart(&f, &w, 0.0, 1.0, default_alpha(0.75)).unwrap()[0];
        let b = rs_integral_sums(&f, &w, 0.0, 1.0).unwrap()[0];
        assert!((a - b).abs() < 2e-2 * b.abs().max(0.1), "{a} vs {b}");
    }

    #[test]
    fn forpart_alpha_independent() {
        let f = path(2048, |t| (2.0 * t).cos());
        let g = path(2048, |t| t.exp());
        let a = rs_integral_forpart(&f, &g, 0.0, 1.0, 0.2).unwrap()[0];
        let b = rs_integral_forpart(&f, &g, 0.0, 1.0, 0.4).unwrap()[0];
        assert!((a - b).abs() < 1e-2 * a.abs());
    }

    #[test]
    fn forpart_additive_in_interval() {
        let f = path(1024, |t| (3.0 * t).sin() + 1.0);
        let g = path(1024, |t| t * t + t);
        let whole = rs_integral_forpart(&f, &g, 0.0, 1.0, 0.3).unwrap()[0];
        let left = rs_integral_forpart(&f, &g, 0.0, 0.5, 0.3).unwrap()[0];
        let right = rs_integral_forpart(&f, &g, 0.5, 1.0, 0.3).unwrap()[0];
        assert!((whole - left - right).abs() < 2e-3);
        let whole = rs_integral_sums(&f, &g, 0.0, 1.0).unwrap()[0];
        let left = rs_integral_sums(&f, &g, 0.0, 0.5).unwrap()[0];
        let right = rs_integral_sums(&f, &g, 0.5, 1.0).unwrap()[0];
        assert!((whole - left - right).abs() < 1e-14);
    }

    #[test]
    fn vector_pairing() {
        let grid = TimeGrid::uniform(1.0, 256).unwrap();
        let g = SampledPath::from_fn(grid, 2, |t, o| {
            o[0] = t;
            o[1] = t * t;
        })
        .unwrap();
        let one = SampledPath::scalar_from_fn(grid, |_| 1.0).unwrap();
        let v = rs_integral_forpart(&one, &g, 0.0, 1.0, 0.3).unwrap();
        assert_eq!(v.len(), 2);
        assert!((v[0] - 1.0).abs() < 2e-3 && (v[1] - 1.0).abs() < 2e-3, "{v:?}");
        let bad = SampledPath::zeros(grid, 3);
        assert!(rs_integral_sums(&bad, &g, 0.0, 1.0).is_err());
    }

    #[test]
    fn default_alpha_is_admissible() {
        for h in [0.55, 0.6, 0.75, 0.9, 0.99] {
            let a = default_alpha(h);
            assert!(a > 1.0 - h && a < 0.5);
        }
    }

    proptest! {
        #[test]
        fn sums_bilinear(c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, w in 0.5f64..6.0) {
            let grid = TimeGrid::uniform(1.0, 64).unwrap();
            let f1 = SampledPath::scalar_from_fn(grid, |t| (w * t).sin()).unwrap();
            let f2 = SampledPath::scalar_from_fn(grid, |t| t * t).unwrap();
            let g = SampledPath::scalar_from_fn(grid, |t| (w * t).cos()).unwrap();
            let comb = f1.scaled(c1).add_scaled(&f2, c2).unwrap();
            let lhs = rs_integral_sums(&comb, &g, 0.0, 1.0).unwrap()[0];
            let rhs = c1 * rs_integral_sums(&f1, &g, 0.0, 1.0).unwrap()[0]
                + c2 * rs_integral_sums(&f2, &g, 0.0, 1.0).unwrap()[0];
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn left_derivative_homogeneous(c in -4.0f64..4.0, t in 0.05f64..1.0, alpha in 0.05f64..0.95) {
            let f = path(64, |s| (4.0 * s).sin() + s);
            let a = frac_deriv_left(&f.scaled(c), 0.0, alpha, t).unwrap()[0];
            let b = c * frac_deriv_left(&f, 0.0, alpha, t).unwrap()[0];
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}
