//! Malliavin derivative, Malliavin matrix `Γ_t`, nondegeneracy diagnostics
//! and kernel density estimates for the law of `X_t`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::coefficients::{CoefficientSet, VolterraCoefficients};
use crate::error::{invalid, Error, Result};
use crate::fbm::{check_hurst, increment_correlations, path_rng, step_inner_product};
use crate::grid::SampledPath;
use crate::quadrature::linear_fit;
use crate::volterra::{frechet_direction, solve_sensitivity_field, solve_svie, SensitivityField};

/// `D_s X_t` for a solution `x` driven by `w`; the same field as the sensitivity `Φ_t(s)`.
pub fn malliavin_field(coeffs: &CoefficientSet, x: &SampledPath, w: &SampledPath) -> Result<SensitivityField> {
    solve_sensitivity_field(coeffs, x, w)
}

/// `Γ_t^{ij} = ⟨D X_t^i, D X_t^j⟩_H`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MalliavinMatrix {
    pub node: usize,
    pub t: f64,
    pub d: usize,
    pub gamma: Vec<f64>,
}

impl MalliavinMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.d + j]
    }

    /// `ξᵀ Γ ξ`.
    pub fn quadratic_form(&self, xi: &[f64]) -> f64 {
        let d = self.d;
        (0..d).map(|i| xi[i] * (0..d).map(|j| self.gamma[i * d + j] * xi[j]).sum::<f64>()).sum()
    }
}

/// Malliavin matrix at node time `t`. The derivative on the cell
/// `[t_p, t_{p+1})` is taken as `D_{t_p} X_t`, matching the left-point sums of
/// the solver.
pub fn malliavin_matrix(field: &SensitivityField, t: f64, hurst: f64) -> Result<MalliavinMatrix> {
    check_hurst(hurst)?;
    let grid = field.grid();
    let node = grid.index_of(t)?;
    let (d, m) = field.dims();
    let rho = increment_correlations(node.max(1), hurst);
    // rows[(i*m + l)][p] = Φ^{il}_{t}(t_p)
    let rows: Vec<Vec<f64>> = (0..d * m)
        .map(|il| (0..node).map(|p| field.value(node, p)[il]).collect())
        .collect();
    let mut gamma = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let v: f64 = (0..m)
                .map(|l| step_inner_product(&rows[i * m + l], &rows[j * m + l], grid.step(), &rho, hurst))
                .sum();
            gamma[i * d + j] = v;
            gamma[j * d + i] = v;
        }
    }
    Ok(MalliavinMatrix { node, t: grid.node(node), d, gamma })
}

/// `(smallest eigenvalue, determinant)` of a symmetric matrix.
pub fn gamma_spectrum(gamma: &MalliavinMatrix) -> Result<(f64, f64)> {
    let d = gamma.d;
    let scale = gamma.gamma.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for i in 0..d {
        for j in 0..i {
            if (gamma.get(i, j) - gamma.get(j, i)).abs() > 1e-12 * scale {
                return Err(invalid(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &gamma.gamma));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let det = eig.eigenvalues.iter().product();
    Ok((min, det))
}

/// Outcome of a uniform-ellipticity probe.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticityReport {
    pub passed: bool,
    /// Index into the probe list of the smallest quadratic form.
    pub worst_probe: usize,
    pub worst_direction: Vec<f64>,
    /// `min Σ_j (Σ_i σ^{ij} ξ_i)²` over probes and directions.
    pub worst_value: f64,
}

fn unit_sphere_mesh(d: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..128)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 128.0;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let count = 256;
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * k as f64;
                    vec![r * a.cos(), r * a.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = path_rng(0x5eed, d as u64);
            (0..64 * d)
                .map(|_| {
                    let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    normalized(v)
                })
                .collect()
        }
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn quadratic(sig: &[f64], d: usize, m: usize, xi: &[f64]) -> f64 {
    (0..m)
        .map(|j| {
            let v: f64 = (0..d).map(|i| sig[i * m + j] * xi[i]).sum();
            v * v
        })
        .sum()
}

/// Check `Σ_j (Σ_i σ^{ij}(t,s,x) ξ_i)² ≥ ρ²` on every probe and every direction
/// of a deterministic unit-sphere mesh, refined locally around the worst one.
pub fn ellipticity_check(
    model: &dyn VolterraCoefficients,
    probes: &[(f64, f64, Vec<f64>)],
    rho: f64,
) -> EllipticityReport {
    let (d, m) = (model.state_dim(), model.noise_dim());
    let mesh = unit_sphere_mesh(d);
    let mut sig = vec![0.0; d * m];
    let mut worst = EllipticityReport {
        passed: false,
        worst_probe: 0,
        worst_direction: vec![0.0; d],
        worst_value: f64::INFINITY,
    };
    for (idx, (t, s, x)) in probes.iter().enumerate() {
        model.diffusion(*t, *s, x, &mut sig);
        let (mut best, mut dir) = (f64::INFINITY, mesh[0].clone());
        for xi in &mesh {
            let q = quadratic(&sig, d, m, xi);
            if q < best {
                best = q;
                dir = xi.clone();
            }
        }
        // pattern search on the sphere
        let mut step = 0.5 / mesh.len() as f64;
        if d > 1 {
            while step > 1e-12 {
                let mut improved = false;
                for k in 0..d {
                    for sign in [1.0, -1.0] {
                        let mut cand = dir.clone();
                        cand[k] += sign * step;
                        let cand = normalized(cand);
                        let q = quadratic(&sig, d, m, &cand);
                        if q < best {
                            best = q;
                            dir = cand;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
        }
        if best < worst.worst_value {
            worst.worst_value = best;
            worst.worst_probe = idx;
            worst.worst_direction = dir;
        }
    }
    worst.passed = !probes.is_empty() && rho > 0.0 && worst.worst_value >= rho * rho * (1.0 - 1e-12);
    worst
}

/// Finite-difference check of the Fréchet derivative along `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub epsilons: Vec<f64>,
    /// Sup-node gap between the difference quotient and the field, per `ε`.
    pub gaps: Vec<f64>,
    /// Log-log slope of gap against `ε`; absent when the gaps are at roundoff.
    pub slope: Option<f64>,
    /// True when every gap is at roundoff level (the solution is affine in the driver).
    pub exact: bool,
}

impl GradientReport {
    /// Slope in `[0.8, 1.2]`, or an exact match.
    pub fn first_order(&self) -> bool {
        self.exact || self.slope.is_some_and(|s| (s - 1.0).abs() <= 0.2)
    }
}

/// Roundoff floor for the gap, relative to the size of the directional derivative.
const EXACT_GAP: f64 = 1e-8;

pub fn fd_gradient_check(
    coeffs: &CoefficientSet,
    x0: &[f64],
    w: &SampledPath,
    h: &SampledPath,
    epsilons: &[f64],
) -> Result<GradientReport> {
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(invalid("ε ladder must be non-empty and positive"));
    }
    w.check_compatible(h)?;
    let x = solve_svie(coeffs, x0, w)?;
    let field = malliavin_field(coeffs, &x, w)?;
    let dx = frechet_direction(&field, h)?;
    let scale = dx.values().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let gaps = epsilons
        .iter()
        .map(|&eps| {
            let xe = solve_svie(coeffs, x0, &w.add_scaled(h, eps)?)?;
            Ok(xe
                .values()
                .iter()
                .zip(x.values())
                .zip(dx.values())
                .map(|((a, b), c)| ((a - b) / eps - c).abs())
                .fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    let exact = gaps.iter().all(|g| *g <= EXACT_GAP * scale);
    let slope = if exact || epsilons.len() < 2 {
        None
    } else {
        let lx: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
        let ly: Vec<f64> = gaps.iter().map(|g| g.max(f64::MIN_POSITIVE).ln()).collect();
        Some(linear_fit(&lx, &ly).1)
    };
    Ok(GradientReport { epsilons: epsilons.to_vec(), gaps, slope, exact })
}

/// Kernel bandwidth: Scott's rule per axis, or a fixed value on every axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

/// Regular evaluation lattice.
#[derive(Debug, Clone, PartialEq)]
pub enum Lattice {
    /// `points` per axis covering mean ± 5 standard deviations.
    Auto { points: usize },
    Explicit { lower: Vec<f64>, upper: Vec<f64>, points: usize },
}

/// Gaussian kernel density estimate on a regular lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    /// Lattice points, row-major with the last axis fastest.
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub bandwidth: Vec<f64>,
    pub samples: usize,
    pub cell_volume: f64,
}

impl DensityEstimate {
    /// Lattice sum times cell volume.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume
    }
}

pub const MIN_KDE_SAMPLES: usize = 100;

pub fn kde_density(samples: &[Vec<f64>], bandwidth: Bandwidth, lattice: &Lattice) -> Result<DensityEstimate> {
    let n = samples.len();
    if n < MIN_KDE_SAMPLES {
        return Err(invalid(format!("density estimation needs at least {MIN_KDE_SAMPLES} samples, got {n}")));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(invalid("samples must share one positive dimension"));
    }
    let mean: Vec<f64> = (0..d).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n as f64).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| (samples.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt())
        .collect();
    if std.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::DegenerateInput("samples have zero variance along some axis".into()));
    }
    let bw: Vec<f64> = match bandwidth {
        Bandwidth::Auto => {
            let factor = (n as f64).powf(-1.0 / (d as f64 + 4.0));
            std.iter().map(|s| s * factor).collect()
        }
        Bandwidth::Fixed(b) if b > 0.0 && b.is_finite() => vec![b; d],
        Bandwidth::Fixed(b) => return Err(invalid(format!("bandwidth must be positive, got {b}"))),
    };
    let (lower, upper, points) = match lattice {
        Lattice::Auto { points } => (
            mean.iter().zip(&std).map(|(m, s)| m - 5.0 * s).collect::<Vec<_>>(),
            mean.iter().zip(&std).map(|(m, s)| m + 5.0 * s).collect::<Vec<_>>(),
            *points,
        ),
        Lattice::Explicit { lower, upper, points } => (lower.clone(), upper.clone(), *points),
    };
    if points < 2 || lower.len() != d || upper.len() != d || lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
        return Err(invalid("lattice needs ≥ 2 points per axis and lower < upper on every axis"));
    }
    let spacing: Vec<f64> = lower.iter().zip(&upper).map(|(a, b)| (b - a) / (points - 1) as f64).collect();
    let total = points.pow(d as u32);
    let lattice_points: Vec<Vec<f64>> = (0..total)
        .map(|mut idx| {
            let mut p = vec![0.0; d];
            for j in (0..d).rev() {
                p[j] = lower[j] + (idx % points) as f64 * spacing[j];
                idx /= points;
            }
            p
        })
        .collect();
    let norm = 1.0 / (n as f64 * bw.iter().map(|b| b * (2.0 * std::f64::consts::PI).sqrt()).product::<f64>());
    let values: Vec<f64> = lattice_points
        .par_iter()
        .map(|p| {
            norm * samples
                .iter()
                .map(|s| {
                    let q: f64 = (0..d).map(|j| ((p[j] - s[j]) / bw[j]).powi(2)).sum();
                    (-0.5 * q).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(DensityEstimate {
        points: lattice_points,
        values,
        bandwidth: bw,
        samples: n,
        cell_volume: spacing.iter().product(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{BuiltinCoefficients, DiffusionKind, DriftKind, Family};
    use crate::fbm::sample_fbm;
    use crate::grid::TimeGrid;
    use proptest::prelude::*;
    use rand::Rng;

    fn constant_set(d: usize, m: usize, sigma: Vec<f64>) -> CoefficientSet {
        BuiltinCoefficients::new(d, m, DriftKind::Zero, DiffusionKind::Constant(sigma)).unwrap().into_set()
    }

    #[test]
    fn field_for_constant_sigma_and_future_times() {
        let w = sample_fbm(TimeGrid::uniform(1.0, 64).unwrap(), 0.75, 1, 3).unwrap();
        let c = constant_set(1, 1, vec![0.8]);
        let x = solve_svie(&c, &[0.0], &w).unwrap();
        let field = malliavin_field(&c, &x, &w).unwrap();
        assert_eq!(field.value(40, 10), &[0.8]);
        assert_eq!(field.value(10, 40), &[0.0]);
    }

    #[test]
    fn indicator_gram_matrix() {
        let grid = TimeGrid::uniform(1.0, 256).unwrap();
        let w = sample_fbm(grid, 0.75, 1, 1).unwrap();
        let c = constant_set(1, 1, vec![1.0]);
        let x = solve_svie(&c, &[0.0], &w).unwrap();
        let gamma = malliavin_matrix(&malliavin_field(&c, &x, &w).unwrap(), 1.0, 0.75).unwrap();
        assert!((gamma.get(0, 0) - 1.0).abs() < 1e-3);
        let half = malliavin_matrix(&malliavin_field(&c, &x, &w).unwrap(), 0.5, 0.75).unwrap();
        assert!((half.get(0, 0) - 0.5f64.powf(1.5)).abs() < 1e-3);

        let w2 = sample_fbm(grid, 0.75, 2, 1).unwrap();
        let c2 = constant_set(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let x2 = solve_svie(&c2, &[0.0, 0.0], &w2).unwrap();
        let g2 = malliavin_matrix(&malliavin_field(&c2, &x2, &w2).unwrap(), 1.0, 0.75).unwrap();
        for (v, e) in g2.gamma.iter().zip([1.0, 0.0, 0.0, 1.0]) {
            assert!((v - e).abs() < 1e-3);
        }
        let (min, det) = gamma_spectrum(&g2).unwrap();
        assert!((min - 1.0).abs() < 1e-3 && (det - 1.0).abs() < 2e-3);
    }

    #[test]
    fn degenerate_field_gives_zero_matrix() {
        let field = SensitivityField::zeros(TimeGrid::uniform(1.0, 32).unwrap(), 2, 1);
        let g = malliavin_matrix(&field, 1.0, 0.75).unwrap();
        assert!(g.gamma.iter().all(|&v| v == 0.0));
        assert_eq!(gamma_spectrum(&g).unwrap(), (0.0, 0.0));
        assert!(malliavin_matrix(&field, 0.51, 0.75).is_err());
    }

    #[test]
    fn asymmetric_rejected() {
        let g = MalliavinMatrix { node: 0, t: 0.0, d: 2, gamma: vec![1.0, 0.5, 0.4, 1.0] };
        assert!(gamma_spectrum(&g).is_err());
    }

    #[test]
    fn ellipticity_examples() {
        let probes: Vec<_> = (0..40).map(|i| (0.5, 0.2, vec![i as f64 * 0.2 - 4.0, 0.3 * i as f64])).collect();
        let id = constant_set(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let r = ellipticity_check(id.model.as_ref(), &probes, 1.0);
        assert!(r.passed && (r.worst_value - 1.0).abs() < 1e-12);

        let rank1 = constant_set(2, 1, vec![1.0, 0.0]);
        let r = ellipticity_check(rank1.model.as_ref(), &probes, 1e-3);
        assert!(!r.passed);
        assert!(r.worst_value < 1e-20);
        assert!(r.worst_direction[0].abs() < 1e-9 && (r.worst_direction[1].abs() - 1.0).abs() < 1e-9);

        let ell = Family::Elliptic { offset: 0.0, gain: 0.0 }.build(1, 1).unwrap();
        let probes: Vec<_> = [-std::f64::consts::FRAC_PI_2, 0.0, 1.0].iter().map(|&x| (0.0, 0.0, vec![x])).collect();
        let r = ellipticity_check(&ell, &probes, 1.0);
        assert!(r.passed && (r.worst_value - 1.0).abs() < 1e-12 && r.worst_probe == 0);
    }

    #[test]
    fn ellipticity_three_dims_refines() {
        // σ = diag(1, 2, 0.5): minimum 0.25 along e₃
        let c = constant_set(3, 3, vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.5]);
        let r = ellipticity_check(c.model.as_ref(), &[(0.0, 0.0, vec![0.0; 3])], 0.5);
        assert!((r.worst_value - 0.25).abs() < 1e-9);
        assert!(r.passed);
    }

    #[test]
    fn gradient_check_zero_direction_and_nonlinear() {
        let grid = TimeGrid::uniform(1.0, 128).unwrap();
        let w = sample_fbm(grid, 0.75, 1, 8).unwrap();
        let c = Family::Sinusoidal { amplitude: 1.0, omega: 0.0, nu: 0.0, offset: 0.1, gain: 0.5 }
            .coefficient_set(1, 1)
            .unwrap();
        let zero = SampledPath::zeros(grid, 1);
        let r = fd_gradient_check(&c, &[0.1], &w, &zero, &[1e-2, 1e-3]).unwrap();
        assert!(r.exact && r.gaps.iter().all(|&g| g == 0.0));

        let h = SampledPath::scalar_from_fn(grid, |t| t).unwrap();
        let r = fd_gradient_check(&c, &[0.1], &w, &h, &[1e-2, 5e-3, 1e-3, 1e-4]).unwrap();
        assert!(r.first_order() && !r.exact, "{r:?}");
        let ratio = r.gaps[1] / r.gaps[0];
        assert!((0.3..=0.7).contains(&ratio), "{ratio}");
    }

    #[test]
    fn kde_standard_normal() {
        let mut rng = path_rng(11, 0);
        let samples: Vec<Vec<f64>> = (0..10_000).map(|_| vec![rng.sample::<f64, _>(StandardNormal)]).collect();
        let est = kde_density(&samples, Bandwidth::Auto, &Lattice::Auto { points: 201 }).unwrap();
        let mass = est.mass();
        assert!((0.9..=1.01).contains(&mass), "{mass}");
        let at0 = kde_density(
            &samples,
            Bandwidth::Auto,
            &Lattice::Explicit { lower: vec![-1.0], upper: vec![1.0], points: 3 },
        )
        .unwrap()
        .values[1];
        assert!((at0 - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 0.05);
    }

    #[test]
    fn kde_rejections() {
        let same = vec![vec![1.0, 2.0]; 200];
        assert!(matches!(
            kde_density(&same, Bandwidth::Auto, &Lattice::Auto { points: 5 }),
            Err(Error::DegenerateInput(_))
        ));
        let few = vec![vec![1.0]; 10];
        assert!(kde_density(&few, Bandwidth::Auto, &Lattice::Auto { points: 5 }).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gamma_is_symmetric_psd(seed in 0u64..1000, a in 0.2f64..2.0) {
            let grid = TimeGrid::uniform(1.0, 48).unwrap();
            let w = sample_fbm(grid, 0.7, 2, seed).unwrap();
            let c = Family::Sinusoidal { amplitude: a, omega: 0.3, nu: 0.2, offset: 0.1, gain: 0.3 }
                .coefficient_set(2, 2)
                .unwrap();
            let x = solve_svie(&c, &[0.1, -0.2], &w).unwrap();
            let field = malliavin_field(&c, &x, &w).unwrap();
            for k in [8usize, 24, 48] {
                let g = malliavin_matrix(&field, grid.node(k), 0.7).unwrap();
                prop_assert!((g.get(0, 1) - g.get(1, 0)).abs() <= 1e-12);
                let (min, det) = gamma_spectrum(&g).unwrap();
                prop_assert!(min >= -1e-10);
                prop_assert!(det >= min.powi(2) - 1e-12);
            }
        }

        #[test]
        fn gram_monotone_in_time_for_constant_sigma(c0 in -2.0f64..2.0, xi in 0.0f64..std::f64::consts::TAU) {
            let grid = TimeGrid::uniform(1.0, 40).unwrap();
            let w = sample_fbm(grid, 0.75, 2, 1).unwrap();
            let set = constant_set(2, 2, vec![1.0, c0, 0.0, 1.0]);
            let x = solve_svie(&set, &[0.0, 0.0], &w).unwrap();
            let field = malliavin_field(&set, &x, &w).unwrap();
            let dir = [xi.cos(), xi.sin()];
            let mut prev = 0.0;
            for k in 0..=40 {
                let q = malliavin_matrix(&field, grid.node(k), 0.75).unwrap().quadratic_form(&dir);
                prop_assert!(q >= prev - 1e-12);
                prev = q;
            }
        }
    }
}
