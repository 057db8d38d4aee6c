//! Closed-form integration of the weight `u^{-(1+θ)}` against piecewise-linear
//! data, used by the fractional norms and derivatives.
//!
//! On a piece `[u0, u1]` where the integrand numerator is linear,
//! `ℓ(u) = c0 + c1 u`, the antiderivatives of `u^{-1-θ}` and `u^{-θ}` are
//! `-u^{-θ}/θ` and `u^{1-θ}/(1-θ)`, so each piece costs one power per endpoint.

/// Source of `u^{-θ}`: direct `powf`, or a lookup table on a uniform lattice of `u`.
#[derive(Debug, Clone)]
pub(crate) struct NegPow {
    theta: f64,
    spacing: f64,
    table: Vec<f64>,
}

impl NegPow {
    pub(crate) fn direct(theta: f64) -> Self {
        Self { theta, spacing: 0.0, table: Vec::new() }
    }

    /// Tabulate `(i·spacing)^{-θ}` for `i < len`; entry 0 is unused.
    pub(crate) fn tabulated(theta: f64, spacing: f64, len: usize) -> Self {
        let table = (0..len)
            .map(|i| if i == 0 { f64::INFINITY } else { (i as f64 * spacing).powf(-theta) })
            .collect();
        Self { theta, spacing, table }
    }

    pub(crate) fn theta(&self) -> f64 {
        self.theta
    }

    #[inline]
    pub(crate) fn get(&self, u: f64) -> f64 {
        if self.spacing > 0.0 {
            let idx = (u / self.spacing).round();
            if idx >= 1.0 && (idx as usize) < self.table.len() && (idx * self.spacing - u).abs() <= 1e-9 * self.spacing {
                return self.table[idx as usize];
            }
        }
        u.powf(-self.theta)
    }
}

/// `∫_{u0}^{u1} ℓ(u) u^{-(1+θ)} du` with `ℓ` linear, `ℓ(u0) = g0`, `ℓ(u1) = g1`.
/// When `u0 == 0` the numerator must vanish there (`g0 == 0`).
#[inline]
pub(crate) fn weighted_piece(u0: f64, u1: f64, g0: f64, g1: f64, pw: &NegPow) -> f64 {
    let theta = pw.theta();
    let c1 = (g1 - g0) / (u1 - u0);
    let p1 = pw.get(u1);
    if u0 <= 0.0 {
        return c1 * u1 * p1 / (1.0 - theta);
    }
    let p0 = pw.get(u0);
    let c0 = g0 - c1 * u0;
    let a = (p0 - p1) / theta;
    let b = (u1 * p1 - u0 * p0) / (1.0 - theta);
    c0 * a + c1 * b
}

/// Same as [`weighted_piece`] but for `|ℓ(u)|`, splitting at a sign change.
#[inline]
pub(crate) fn weighted_piece_abs(u0: f64, u1: f64, g0: f64, g1: f64, pw: &NegPow) -> f64 {
    if g0 * g1 >= 0.0 {
        let s = if g0 + g1 >= 0.0 { 1.0 } else { -1.0 };
        return s * weighted_piece(u0, u1, g0, g1, pw);
    }
    let root = u0 + (u1 - u0) * g0 / (g0 - g1);
    weighted_piece_abs(u0, root, g0, 0.0, pw) + weighted_piece_abs(root, u1, 0.0, g1, pw)
}

/// Magnitude piece for vector data: exact for `d == 1`, otherwise the
/// Euclidean magnitude is interpolated linearly between the piece endpoints.
#[inline]
pub(crate) fn weighted_piece_norm(u0: f64, u1: f64, d0: &[f64], d1: &[f64], pw: &NegPow) -> f64 {
    if d0.len() == 1 {
        return weighted_piece_abs(u0, u1, d0[0], d1[0], pw);
    }
    let m0 = euclid(d0);
    let m1 = euclid(d1);
    weighted_piece(u0, u1, m0, m1, pw)
}

#[inline]
pub(crate) fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
