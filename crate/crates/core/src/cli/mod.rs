//! Config-driven experiment runner.
//!
//! Path `i` always draws its driver from the stream `(seed, i)` and results are
//! merged in index order, so outputs do not depend on the worker count.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use crate::bounds::{driver_norm, scaling_experiment, BoundKind, BoundParams, BoundReport, EnsemblePoint};
use crate::coefficients::{CoefficientSet, ConstantLinear};
use crate::error::{invalid, Error, Result};
use crate::fbm::{rh, GaussianSampler};
use crate::frac_calc::{rs_integral_forpart, rs_integral_sums};
use crate::grid::{sup_norm, SampledPath, TimeGrid};
use crate::malliavin::{
    fd_gradient_check, gamma_spectrum, kde_density, malliavin_field, malliavin_matrix, Bandwidth, Lattice,
};
use crate::volterra::{solve_linear_z, solve_svie};

pub use config::{load_config, parse_config, ExperimentConfig, ExperimentKind};
pub use output::{write_results, ExperimentOutput, RunManifest, Table};

/// Per-path outcome: a CSV row plus data kept for the ensemble stage.
struct PathResult {
    row: Vec<f64>,
    payload: Vec<f64>,
}

struct Context {
    grid: TimeGrid,
    sampler: GaussianSampler,
    coeffs: CoefficientSet,
}

impl Context {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let grid = TimeGrid::uniform(cfg.horizon, cfg.steps)?;
        let sampler = GaussianSampler::new(grid, cfg.hurst)?;
        let mut coeffs = cfg.family.coefficient_set(cfg.d, cfg.m)?;
        if cfg.experiment == ExperimentKind::BoundLinear {
            let w0 = cfg.linear.w0;
            let w = SampledPath::from_fn(grid, cfg.d, |_, out| out.fill(w0))?;
            let part = ConstantLinear { d: cfg.d, m: cfg.m, h0: cfg.linear.h0, f0: cfg.linear.f0 }.into_part(w);
            coeffs = coeffs.with_linear(part);
        }
        Ok(Self { grid, sampler, coeffs })
    }

    fn driver(&self, cfg: &ExperimentConfig, index: usize) -> SampledPath {
        self.sampler.sample(cfg.m, cfg.seed, index as u64)
    }
}

/// Run `f` on every path index in order; keep the prefix before the first failure.
fn ensemble<F>(paths: usize, f: F) -> (Vec<PathResult>, Option<Error>)
where
    F: Fn(usize) -> Result<PathResult> + Sync,
{
    let all: Vec<Result<PathResult>> = (0..paths).into_par_iter().map(&f).collect();
    let mut done = Vec::with_capacity(paths);
    for (i, r) in all.into_iter().enumerate() {
        match r {
            Ok(p) => done.push(p),
            Err(e) => return (done, Some(Error::NumericFailure(format!("path {i}: {e}")))),
        }
    }
    (done, None)
}

fn table(columns: &[String], results: &[PathResult]) -> Table {
    Table {
        index_name: "path".into(),
        columns: columns.to_vec(),
        rows: results.iter().enumerate().map(|(i, r)| (i, r.row.clone())).collect(),
    }
}

fn names(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

fn bound_kind(kind: ExperimentKind) -> Option<BoundKind> {
    match kind {
        ExperimentKind::BoundPolynomial => Some(BoundKind::Polynomial),
        ExperimentKind::BoundExponential => Some(BoundKind::Exponential),
        ExperimentKind::BoundLinear => Some(BoundKind::LinearSystem),
        _ => None,
    }
}

fn run_bound(cfg: &ExperimentConfig, ctx: &Context, kind: BoundKind) -> (ExperimentOutput, Option<Error>) {
    let x0_norm = cfg.x0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (results, mut err) = ensemble(cfg.paths, |i| {
        let g = ctx.driver(cfg, i);
        let x = solve_svie(&ctx.coeffs, &cfg.x0, &g)?;
        let measured = if kind == BoundKind::LinearSystem {
            sup_norm(&solve_linear_z(&ctx.coeffs, &x, &g)?, 0.0, cfg.horizon)?
        } else {
            sup_norm(&x, 0.0, cfg.horizon)?
        };
        Ok(PathResult { row: vec![measured, driver_norm(&g, cfg.alpha)?, x0_norm], payload: Vec::new() })
    });
    let cols = names(&["measured", "g_norm", "x0_norm", "rhs", "ratio"]);
    let points: Vec<EnsemblePoint> = results
        .iter()
        .map(|r| EnsemblePoint { measured: r.row[0], g_norm: r.row[1], x0_norm: r.row[2] })
        .collect();
    let mut out = ExperimentOutput { paths: table(&cols, &[]), ..Default::default() };
    let report = (|| {
        if points.is_empty() {
            return Err(invalid("no path completed"));
        }
        let params = BoundParams::from_coefficients(&ctx.coeffs, cfg.alpha, &ctx.grid, cfg.constant.unwrap_or(0.0))?;
        let report = match cfg.constant {
            None => BoundReport::build(kind, &params, &points)?,
            Some(c) => {
                let rows = points
                    .iter()
                    .map(|p| {
                        let rhs = crate::bounds::eval_bound(kind, &params, p.x0_norm, p.g_norm)?;
                        Ok(crate::bounds::BoundRow {
                            measured: p.measured,
                            rhs,
                            ratio: p.measured / rhs,
                            g_norm: p.g_norm,
                            x0_norm: p.x0_norm,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
                BoundReport { kind, rows, max_ratio, calibrated_c: c }
            }
        };
        Ok((params, report))
    })();
    match report {
        Ok((params, report)) => {
            out.paths.rows = report
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| (i, vec![r.measured, r.g_norm, r.x0_norm, r.rhs, r.ratio]))
                .collect();
            out.summary = json!({
                "experiment": cfg.experiment.id(),
                "bound": kind.name(),
                "paths": report.rows.len(),
                "constant": report.calibrated_c,
                "constant_calibrated": cfg.constant.is_none(),
                "max_ratio": report.max_ratio,
                "b0_alpha": params.b0_alpha,
                "max_measured": points.iter().map(|p| p.measured).fold(0.0, f64::max),
            });
        }
        Err(e) => {
            out.paths.rows = results.iter().enumerate().map(|(i, r)| (i, [r.row.clone(), vec![f64::NAN; 2]].concat())).collect();
            err.get_or_insert(e);
        }
    }
    (out, err)
}

fn run_gradient(cfg: &ExperimentConfig, ctx: &Context) -> (ExperimentOutput, Option<Error>) {
    let h = SampledPath::from_fn(ctx.grid, cfg.m, |t, out| out.fill(t)).expect("finite direction");
    let (results, err) = ensemble(cfg.paths, |i| {
        let w = ctx.driver(cfg, i);
        let r = fd_gradient_check(&ctx.coeffs, &cfg.x0, &w, &h, &cfg.epsilons)?;
        let mut row = r.gaps.clone();
        row.push(r.slope.unwrap_or(f64::NAN));
        row.push(if r.exact { 1.0 } else { 0.0 });
        row.push(if r.first_order() { 1.0 } else { 0.0 });
        Ok(PathResult { row, payload: Vec::new() })
    });
    let k = cfg.epsilons.len();
    let mut cols: Vec<String> = (0..k).map(|j| format!("gap_{j}")).collect();
    cols.extend(names(&["slope", "exact", "first_order"]));
    let slopes: Vec<f64> = results.iter().map(|r| r.row[k]).filter(|s| s.is_finite()).collect();
    let summary = json!({
        "experiment": cfg.experiment.id(),
        "family": cfg.family.id(),
        "paths": results.len(),
        "epsilons": cfg.epsilons,
        "all_first_order": results.iter().all(|r| r.row[k + 2] == 1.0),
        "exact_paths": results.iter().filter(|r| r.row[k + 1] == 1.0).count(),
        "min_slope": slopes.iter().copied().fold(f64::INFINITY, f64::min),
        "max_slope": slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    });
    (ExperimentOutput { paths: table(&cols, &results), summary: finite_json(summary), extra: Vec::new() }, err)
}

fn run_density(cfg: &ExperimentConfig, ctx: &Context) -> (ExperimentOutput, Option<Error>) {
    let (results, mut err) = ensemble(cfg.paths, |i| {
        let w = ctx.driver(cfg, i);
        let x = solve_svie(&ctx.coeffs, &cfg.x0, &w)?;
        let field = malliavin_field(&ctx.coeffs, &x, &w)?;
        let gamma = malliavin_matrix(&field, cfg.horizon, cfg.hurst)?;
        let (min, det) = gamma_spectrum(&gamma)?;
        let xt = x.at(cfg.steps).to_vec();
        let mut row = xt.clone();
        row.extend([min, det]);
        Ok(PathResult { row, payload: xt })
    });
    let mut cols: Vec<String> = (0..cfg.d).map(|j| format!("x_T_{j}")).collect();
    cols.extend(names(&["min_eig", "det"]));
    let mins: Vec<f64> = results.iter().map(|r| r.row[cfg.d]).collect();
    let mut summary = json!({
        "experiment": cfg.experiment.id(),
        "family": cfg.family.id(),
        "paths": results.len(),
        "positive_min_eig": mins.iter().filter(|v| **v > 0.0).count(),
        "smallest_min_eig": mins.iter().copied().fold(f64::INFINITY, f64::min),
    });
    let mut extra = Vec::new();
    let samples: Vec<Vec<f64>> = results.iter().map(|r| r.payload.clone()).collect();
    match kde_density(&samples, Bandwidth::Auto, &Lattice::Auto { points: cfg.lattice }) {
        Ok(est) => {
            summary["mass"] = json!(est.mass());
            summary["bandwidth"] = json!(est.bandwidth);
            let mut t = Table::new("point", &[]);
            t.columns = (0..cfg.d).map(|j| format!("y_{j}")).collect();
            t.columns.push("density".into());
            t.rows = est
                .points
                .iter()
                .zip(&est.values)
                .enumerate()
                .map(|(i, (p, v))| (i, [p.clone(), vec![*v]].concat()))
                .collect();
            extra.push(("density.csv".to_string(), t));
        }
        Err(e) => {
            err.get_or_insert(e);
        }
    }
    (ExperimentOutput { paths: table(&cols, &results), summary: finite_json(summary), extra }, err)
}

fn run_scaling(cfg: &ExperimentConfig, ctx: &Context) -> (ExperimentOutput, Option<Error>) {
    let (results, err) = ensemble(cfg.paths, |i| {
        let g = ctx.driver(cfg, i);
        let r = scaling_experiment(&ctx.coeffs, &cfg.x0, &g, &cfg.lambdas)?;
        let mut row = vec![
            r.poly_slope,
            r.loglog_slope,
            r.poly_rss,
            r.exp_rss,
            if r.truncated { 1.0 } else { 0.0 },
        ];
        let mut sups = r.sup_norms.clone();
        sups.resize(cfg.lambdas.len(), f64::NAN);
        row.extend(sups);
        Ok(PathResult { row, payload: Vec::new() })
    });
    let mut cols = names(&["poly_slope", "loglog_slope", "poly_rss", "exp_rss", "truncated"]);
    cols.extend((0..cfg.lambdas.len()).map(|j| format!("sup_{j}")));
    let poly: f64 = results.iter().map(|r| r.row[2]).sum();
    let exp: f64 = results.iter().map(|r| r.row[3]).sum();
    let summary = json!({
        "experiment": cfg.experiment.id(),
        "family": cfg.family.id(),
        "paths": results.len(),
        "lambdas": cfg.lambdas,
        "max_poly_slope": results.iter().map(|r| r.row[0]).fold(f64::NEG_INFINITY, f64::max),
        "pooled_poly_rss": poly,
        "pooled_exp_rss": exp,
        "prefers_exponential": exp < poly,
        "truncated_paths": results.iter().filter(|r| r.row[4] == 1.0).count(),
    });
    (ExperimentOutput { paths: table(&cols, &results), summary: finite_json(summary), extra: Vec::new() }, err)
}

/// Empirical covariance of the sampled node values against `R_H`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceCheck {
    pub max_abs_error: f64,
    pub max_stderr: f64,
    /// `(t, s, empirical, exact, stderr)` for node pairs `i ≤ j`, nodes `1..=n`.
    pub entries: Vec<[f64; 5]>,
}

impl CovarianceCheck {
    /// Error within four standard errors (the largest over node pairs).
    pub fn passed(&self) -> bool {
        self.max_abs_error <= 4.0 * self.max_stderr
    }
}

/// Compare `E[g(t_i) g(t_j)]` estimated from `samples` (node values `1..=n`) with `R_H`.
pub fn covariance_check(grid: &TimeGrid, hurst: f64, samples: &[Vec<f64>]) -> Result<CovarianceCheck> {
    let n = grid.steps();
    let count = samples.len();
    if count < 2 || samples.iter().any(|s| s.len() != n) {
        return Err(invalid("covariance check needs ≥ 2 samples of the n interior-and-final node values"));
    }
    let entries: Vec<[f64; 5]> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (i..n).map(move |j| {
                let emp = samples.iter().map(|s| s[i] * s[j]).sum::<f64>() / count as f64;
                let (t, s) = (grid.node(i + 1), grid.node(j + 1));
                let exact = rh(t, s, hurst);
                let var = (rh(t, t, hurst) * rh(s, s, hurst) + exact * exact) / count as f64;
                [t, s, emp, exact, var.sqrt()]
            })
        })
        .collect();
    let max_abs_error = entries.iter().map(|e| (e[2] - e[3]).abs()).fold(0.0, f64::max);
    let max_stderr = entries.iter().map(|e| e[4]).fold(0.0, f64::max);
    Ok(CovarianceCheck { max_abs_error, max_stderr, entries })
}

fn run_fbm(cfg: &ExperimentConfig, ctx: &Context) -> (ExperimentOutput, Option<Error>) {
    let (results, mut err) = ensemble(cfg.paths, |i| {
        let g = ctx.driver(cfg, i);
        let comp = g.component(0);
        let sup = comp.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Ok(PathResult { row: vec![comp[cfg.steps], sup], payload: comp[1..].to_vec() })
    });
    let cols = names(&["g_T", "sup_abs"]);
    let samples: Vec<Vec<f64>> = results.iter().map(|r| r.payload.clone()).collect();
    let mut summary = json!({
        "experiment": cfg.experiment.id(),
        "hurst": cfg.hurst,
        "paths": results.len(),
        "jitter": ctx.sampler.jitter(),
    });
    let mut extra = Vec::new();
    match covariance_check(&ctx.grid, cfg.hurst, &samples) {
        Ok(c) => {
            summary["max_abs_error"] = json!(c.max_abs_error);
            summary["max_stderr"] = json!(c.max_stderr);
            summary["tolerance"] = json!(4.0 * c.max_stderr);
            summary["passed"] = json!(c.passed());
            let mut t = Table::new("pair", &["t", "s", "empirical", "exact", "stderr"]);
            t.rows = c.entries.iter().enumerate().map(|(i, e)| (i, e.to_vec())).collect();
            extra.push(("covariance.csv".to_string(), t));
        }
        Err(e) => {
            err.get_or_insert(e);
        }
    }
    (ExperimentOutput { paths: table(&cols, &results), summary: finite_json(summary), extra }, err)
}

fn run_integral(cfg: &ExperimentConfig, ctx: &Context) -> (ExperimentOutput, Option<Error>) {
    let (a, b) = (0.0, cfg.horizon);
    let (results, err) = ensemble(cfg.paths, |i| {
        let g = ctx.driver(cfg, i);
        let one = SampledPath::scalar_from_fn(ctx.grid, |_| 1.0)?;
        let (g0, gt) = (g.at(0)[0], g.at(cfg.steps)[0]);
        let exact_gdg = 0.5 * (gt * gt - g0 * g0);
        let forpart_gdg = rs_integral_forpart(&g, &g, a, b, cfg.alpha)?[0];
        let sums_gdg = rs_integral_sums(&g, &g, a, b)?[0];
        let forpart_dg = rs_integral_forpart(&one, &g, a, b, cfg.alpha)?[0];
        let rel = |v: f64, e: f64| (v - e).abs() / e.abs().max(1e-12);
        Ok(PathResult {
            row: vec![
                forpart_gdg,
                sums_gdg,
                exact_gdg,
                forpart_dg,
                gt - g0,
                rel(forpart_gdg, sums_gdg),
                rel(forpart_dg, gt - g0),
            ],
            payload: Vec::new(),
        })
    });
    let cols = names(&[
        "forpart_gdg",
        "sums_gdg",
        "exact_gdg",
        "forpart_dg",
        "exact_dg",
        "rel_gap_gdg",
        "rel_gap_dg",
    ]);
    let summary = json!({
        "experiment": cfg.experiment.id(),
        "paths": results.len(),
        "alpha": cfg.alpha,
        "max_rel_gap_gdg": results.iter().map(|r| r.row[5]).fold(0.0, f64::max),
        "max_rel_gap_dg": results.iter().map(|r| r.row[6]).fold(0.0, f64::max),
    });
    (ExperimentOutput { paths: table(&cols, &results), summary: finite_json(summary), extra: Vec::new() }, err)
}

/// JSON has no NaN or infinity; replace them by null.
fn finite_json(v: serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Object(map) => {
            serde_json::Value::Object(map.into_iter().map(|(k, v)| (k, finite_json(v))).collect())
        }
        serde_json::Value::Array(xs) => serde_json::Value::Array(xs.into_iter().map(finite_json).collect()),
        other => other,
    }
}

/// Compute an experiment without touching the filesystem. The error, when
/// present, stopped the run early; the output holds whatever finished before it.
pub fn execute(cfg: &ExperimentConfig) -> Result<(ExperimentOutput, Option<Error>)> {
    let ctx = Context::new(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::NumericFailure(format!("thread pool: {e}")))?;
    Ok(pool.install(|| match cfg.experiment {
        k if bound_kind(k).is_some() => run_bound(cfg, &ctx, bound_kind(k).unwrap()),
        ExperimentKind::GradientCheck => run_gradient(cfg, &ctx),
        ExperimentKind::DensityStudy => run_density(cfg, &ctx),
        ExperimentKind::ScalingStudy => run_scaling(cfg, &ctx),
        ExperimentKind::FbmValidate => run_fbm(cfg, &ctx),
        ExperimentKind::IntegralValidate => run_integral(cfg, &ctx),
        _ => unreachable!("bound kinds handled above"),
    }))
}

pub const DEFAULT_OUTPUT: &str = "results";

/// Run an experiment and write its outputs to `cfg.output` (default `results/`).
/// A failure part-way through still writes what finished, with the manifest
/// marked incomplete.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let dir: PathBuf = cfg.output.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
    run_into(cfg, &dir)
}

fn run_into(cfg: &ExperimentConfig, dir: &Path) -> Result<RunManifest> {
    let (output, error) = execute(cfg)?;
    let mut manifest = RunManifest {
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        complete: error.is_none(),
        error: error.map(|e| e.to_string()),
        files: Default::default(),
    };
    write_results(&output, &mut manifest, dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(body: &str) -> ExperimentConfig {
        let (head, rest) = body.split_once('\n').unwrap();
        parse_config(&format!(
            "{head}\nseed = 3\n[fbm]\nhurst = 0.75\n[params]\nalpha = 0.3\n[grid]\nsteps = 32\n{rest}"
        ))
        .unwrap()
    }

    #[test]
    fn zero_coefficients_measure_x0() {
        let c = cfg("experiment = bound_polynomial\n[model]\nfamily = constant\nsigma = 0\nx0 = -1.25\n");
        let (out, err) = execute(&c).unwrap();
        assert!(err.is_none());
        let row = &out.paths.rows[0].1;
        assert_eq!(row[0], 1.25);
        assert!(row[4].is_finite());
    }

    #[test]
    fn byte_identical_across_runs_and_workers() {
        let body = "experiment = gradient_check\n[model]\nfamily = sinusoidal\nd = 2\nm = 2\n[run]\npaths = 6\n";
        let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
        for (dir, workers) in dirs.iter().zip([1, 1, 4]) {
            let mut c = cfg(body);
            c.workers = workers;
            c.output = Some(dir.path().to_path_buf());
            let m = run_experiment(&c).unwrap();
            assert!(m.complete);
        }
        for name in ["paths.csv", "metrics_long.csv", "summary.json"] {
            let a = std::fs::read(dirs[0].path().join(name)).unwrap();
            for d in &dirs[1..] {
                assert_eq!(a, std::fs::read(d.path().join(name)).unwrap(), "{name}");
            }
        }
    }

    #[test]
    fn failure_keeps_prefix_and_marks_incomplete() {
        let mut c = cfg("experiment = bound_exponential\n[model]\nfamily = linear\ngamma = 1e12\nx0 = 1\n[run]\npaths = 3\n");
        let dir = tempfile::tempdir().unwrap();
        c.output = Some(dir.path().to_path_buf());
        let m = run_experiment(&c).unwrap();
        assert!(!m.complete);
        assert!(m.error.as_deref().unwrap().contains("path 0"));
        let csv = std::fs::read_to_string(dir.path().join("paths.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn every_kind_runs() {
        let bodies = [
            "experiment = bound_exponential\n[model]\nfamily = linear\nx0 = 1\n[run]\npaths = 3\n",
            "experiment = bound_linear\n[model]\nfamily = sinusoidal\n[run]\npaths = 3\n",
            "experiment = density_study\n[model]\nfamily = elliptic\n[run]\npaths = 100\nlattice = 21\n",
            "experiment = scaling_study\n[model]\nfamily = linear\nx0 = 1\n[run]\npaths = 2\n",
            "experiment = fbm_validate\n[run]\npaths = 50\n",
            "experiment = integral_validate\n[run]\npaths = 2\n",
        ];
        for body in bodies {
            let (out, err) = execute(&cfg(body)).unwrap();
            assert!(err.is_none(), "{body}: {err:?}");
            assert!(!out.paths.rows.is_empty());
            assert!(out.summary.is_object());
        }
    }

    #[test]
    fn covariance_check_small_ensemble() {
        let grid = TimeGrid::uniform(1.0, 16).unwrap();
        let sampler = GaussianSampler::new(grid, 0.75).unwrap();
        let samples: Vec<Vec<f64>> = (0..2000).map(|i| sampler.sample(1, 5, i).component(0)[1..].to_vec()).collect();
        let c = covariance_check(&grid, 0.75, &samples).unwrap();
        assert_eq!(c.entries.len(), 16 * 17 / 2);
        assert!(c.passed(), "{} vs {}", c.max_abs_error, c.max_stderr);
    }
}
