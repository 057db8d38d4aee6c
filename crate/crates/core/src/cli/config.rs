//! Line-oriented experiment configuration: `key = value` pairs grouped under
//! `[section]` headers, `#` comments, decimal or scientific floats, bare strings,
//! comma-separated lists.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::coefficients::Family;
use crate::error::{Error, Result};
use crate::fbm::FracParams;

/// What an experiment computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Sup-norm bound for bounded σ.
    BoundPolynomial,
    /// Sup-norm bound for linearly growing σ.
    BoundExponential,
    /// Sup-norm bound for the auxiliary linear system.
    BoundLinear,
    GradientCheck,
    DensityStudy,
    ScalingStudy,
    FbmValidate,
    IntegralValidate,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::BoundPolynomial,
        ExperimentKind::BoundExponential,
        ExperimentKind::BoundLinear,
        ExperimentKind::GradientCheck,
        ExperimentKind::DensityStudy,
        ExperimentKind::ScalingStudy,
        ExperimentKind::FbmValidate,
        ExperimentKind::IntegralValidate,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            ExperimentKind::BoundPolynomial => "bound_polynomial",
            ExperimentKind::BoundExponential => "bound_exponential",
            ExperimentKind::BoundLinear => "bound_linear",
            ExperimentKind::GradientCheck => "gradient_check",
            ExperimentKind::DensityStudy => "density_study",
            ExperimentKind::ScalingStudy => "scaling_study",
            ExperimentKind::FbmValidate => "fbm_validate",
            ExperimentKind::IntegralValidate => "integral_validate",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL.into_iter().find(|k| k.id() == s).ok_or_else(|| {
            let ids: Vec<_> = Self::ALL.iter().map(|k| k.id()).collect();
            format!("unknown experiment '{s}', expected one of {}", ids.join(", "))
        })
    }
}

/// Parameters of the auxiliary linear system `h = h₀ I`, `f = f₀ δ`, `w ≡ w₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearSpec {
    pub h0: f64,
    pub f0: f64,
    pub w0: f64,
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub hurst: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub mu: f64,
    pub horizon: f64,
    pub steps: usize,
    pub d: usize,
    pub m: usize,
    #[serde(serialize_with = "family_as_map")]
    pub family: Family,
    pub x0: Vec<f64>,
    pub linear: LinearSpec,
    pub paths: usize,
    pub seed: u64,
    pub lambdas: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Points per axis of the density lattice.
    pub lattice: usize,
    /// Fixed generic constant `C`; calibrated from the ensemble when absent.
    pub constant: Option<f64>,
    /// Not part of the canonical form: never changes results.
    #[serde(skip)]
    pub workers: usize,
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

fn family_as_map<S: serde::Serializer>(f: &Family, s: S) -> std::result::Result<S::Ok, S::Error> {
    let map: BTreeMap<&str, f64> = family_params(f).into_iter().collect();
    let mut out = BTreeMap::new();
    out.insert("id", serde_json::Value::from(f.id()));
    out.insert("params", serde_json::to_value(map).map_err(serde::ser::Error::custom)?);
    out.serialize(s)
}

/// Tunable parameters of a family, by config key.
pub fn family_params(f: &Family) -> Vec<(&'static str, f64)> {
    match *f {
        Family::Constant { sigma, drift } => vec![("sigma", sigma), ("drift", drift)],
        Family::Sinusoidal { amplitude, omega, nu, offset, gain } => vec![
            ("amplitude", amplitude),
            ("omega", omega),
            ("nu", nu),
            ("offset", offset),
            ("gain", gain),
        ],
        Family::Linear { gamma, lambda } => vec![("gamma", gamma), ("lambda", lambda)],
        Family::Elliptic { offset, gain } => vec![("offset", offset), ("gain", gain)],
        Family::Convolution { kappa, amplitude, omega, nu } => {
            vec![("kappa", kappa), ("amplitude", amplitude), ("omega", omega), ("nu", nu)]
        }
    }
}

fn family_with(id: &str, get: &mut dyn FnMut(&'static str, f64) -> f64) -> Option<Family> {
    let base = Family::all_defaults().into_iter().find(|f| f.id() == id)?;
    let p: BTreeMap<&str, f64> = family_params(&base).into_iter().map(|(k, v)| (k, get(k, v))).collect();
    Some(match base {
        Family::Constant { .. } => Family::Constant { sigma: p["sigma"], drift: p["drift"] },
        Family::Sinusoidal { .. } => Family::Sinusoidal {
            amplitude: p["amplitude"],
            omega: p["omega"],
            nu: p["nu"],
            offset: p["offset"],
            gain: p["gain"],
        },
        Family::Linear { .. } => Family::Linear { gamma: p["gamma"], lambda: p["lambda"] },
        Family::Elliptic { .. } => Family::Elliptic { offset: p["offset"], gain: p["gain"] },
        Family::Convolution { .. } => Family::Convolution {
            kappa: p["kappa"],
            amplitude: p["amplitude"],
            omega: p["omega"],
            nu: p["nu"],
        },
    })
}

/// Raw `section.key → (value, line)` pairs.
pub type RawConfig = BTreeMap<String, (String, usize)>;

pub fn parse_text(text: &str) -> Result<RawConfig> {
    let mut out = RawConfig::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::ConfigParse { line, message: "unterminated section header".into() })?
                .trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::ConfigParse { line, message: format!("bad section name '{name}'") });
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::ConfigParse { line, message: format!("expected `key = value`, got '{content}'") })?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::ConfigParse { line, message: format!("bad key '{key}'") });
        }
        let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
        if let Some((_, first)) = out.get(&full) {
            return Err(Error::ConfigParse { line, message: format!("duplicate key '{full}' (first set on line {first})") });
        }
        out.insert(full, (value.trim().to_string(), line));
    }
    Ok(out)
}

/// Pulls typed values out of a raw config, collecting every problem.
struct Reader {
    raw: RawConfig,
    errors: Vec<String>,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.raw.remove(key)
    }

    fn parsed<T: FromStr>(&mut self, key: &str, what: &str) -> Option<T> {
        let (v, line) = self.take(key)?;
        match v.parse::<T>() {
            Ok(x) => Some(x),
            Err(_) => {
                self.errors.push(format!("{key} (line {line}): expected {what}, got '{v}'"));
                None
            }
        }
    }

    fn float(&mut self, key: &str, default: Option<f64>) -> Option<f64> {
        let v = self.parsed::<f64>(key, "a number");
        match (v, default) {
            (Some(x), _) if !x.is_finite() => {
                self.errors.push(format!("{key}: must be finite"));
                None
            }
            (Some(x), _) => Some(x),
            (None, Some(d)) => Some(d),
            (None, None) => {
                if !self.errors.iter().any(|e| e.starts_with(key)) {
                    self.errors.push(format!("missing required field '{key}'"));
                }
                None
            }
        }
    }

    fn uint(&mut self, key: &str, default: Option<u64>) -> Option<u64> {
        match (self.parsed::<u64>(key, "a non-negative integer"), default) {
            (Some(x), _) => Some(x),
            (None, Some(d)) if !self.errors.iter().any(|e| e.starts_with(key)) => Some(d),
            (None, _) => {
                if !self.errors.iter().any(|e| e.starts_with(key)) {
                    self.errors.push(format!("missing required field '{key}'"));
                }
                None
            }
        }
    }

    fn list(&mut self, key: &str, default: &[f64]) -> Vec<f64> {
        let Some((v, line)) = self.take(key) else {
            return default.to_vec();
        };
        let parsed: std::result::Result<Vec<f64>, _> = v.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match parsed {
            Ok(xs) if xs.iter().all(|x| x.is_finite()) => xs,
            _ => {
                self.errors.push(format!("{key} (line {line}): expected a comma-separated list of numbers, got '{v}'"));
                default.to_vec()
            }
        }
    }
}

const DEFAULT_LAMBDAS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];
const DEFAULT_EPSILONS: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Validate a parsed config. Every violated constraint is reported together.
pub fn from_raw(raw: RawConfig) -> Result<ExperimentConfig> {
    let mut r = Reader { raw, errors: Vec::new() };
    let experiment = match r.take("experiment") {
        Some((v, line)) => match v.parse::<ExperimentKind>() {
            Ok(k) => Some(k),
            Err(e) => {
                r.errors.push(format!("experiment (line {line}): {e}"));
                None
            }
        },
        None => {
            r.errors.push("missing required field 'experiment'".into());
            None
        }
    };
    let seed = r.uint("seed", None);
    let hurst = r.float("fbm.hurst", None);
    let alpha = r.float("params.alpha", None);
    let beta = r.float("params.beta", Some(1.0));
    let delta = r.float("params.delta", Some(1.0));
    let mu = r.float("params.mu", Some(1.0));
    let horizon = r.float("grid.horizon", Some(1.0));
    let steps = r.uint("grid.steps", None);
    let d = r.uint("model.d", Some(1)).unwrap_or(1) as usize;
    let m = r.uint("model.m", Some(1)).unwrap_or(1) as usize;
    let family_id = r.take("model.family").map(|(v, _)| v).unwrap_or_else(|| "constant".into());
    let family = {
        let mut errs = Vec::new();
        let reader = &mut r;
        let fam = family_with(&family_id, &mut |key, default| {
            reader.float(&format!("model.{key}"), Some(default)).unwrap_or(default)
        });
        if fam.is_none() {
            let ids: Vec<_> = Family::all_defaults().iter().map(|f| f.id()).collect();
            errs.push(format!("model.family: unknown family '{family_id}', expected one of {}", ids.join(", ")));
        }
        r.errors.extend(errs);
        fam
    };
    let x0_list = r.list("model.x0", &[0.0]);
    let linear = LinearSpec {
        h0: r.float("model.h", Some(0.5)).unwrap_or(0.5),
        f0: r.float("model.f", Some(0.5)).unwrap_or(0.5),
        w0: r.float("model.w", Some(1.0)).unwrap_or(1.0),
    };
    let paths = r.uint("run.paths", Some(1));
    let workers = r.uint("run.workers", Some(1)).unwrap_or(1) as usize;
    let output = r.take("run.output").map(|(v, _)| PathBuf::from(v));
    let lambdas = r.list("run.lambdas", &DEFAULT_LAMBDAS);
    let epsilons = r.list("run.epsilons", &DEFAULT_EPSILONS);
    let lattice = r.uint("run.lattice", Some(101)).unwrap_or(101) as usize;
    let constant = if r.raw.contains_key("run.constant") { r.float("run.constant", None) } else { None };

    for (key, (_, line)) in std::mem::take(&mut r.raw) {
        r.errors.push(format!("unknown key '{key}' (line {line})"));
    }
    let mut errors = r.errors;

    if let (Some(h), Some(a), Some(b), Some(de), Some(mu)) = (hurst, alpha, beta, delta, mu) {
        errors.extend(FracParams { hurst: h, alpha: a, beta: b, delta: de, mu }.violations());
    }
    if let Some(n) = steps {
        if n < 16 {
            errors.push(format!("grid.steps must be at least 16, got {n}"));
        }
    }
    if let Some(t) = horizon {
        if !(t > 0.0) {
            errors.push(format!("grid.horizon must be positive, got {t}"));
        }
    }
    if let Some(n) = paths {
        if n < 1 {
            errors.push("run.paths must be at least 1".into());
        }
    }
    if workers < 1 {
        errors.push("run.workers must be at least 1".into());
    }
    if d < 1 || m < 1 {
        errors.push("model.d and model.m must be at least 1".into());
    }
    let x0 = if x0_list.len() == 1 { vec![x0_list[0]; d] } else { x0_list };
    if x0.len() != d {
        errors.push(format!("model.x0 has {} entries, expected 1 or d={d}", x0.len()));
    }
    if let Some(f) = &family {
        if d >= 1 && m >= 1 {
            if let Err(e) = f.build(d, m) {
                errors.push(format!("model.family: {e}"));
            }
        }
    }
    if let Some(kind) = experiment {
        match kind {
            ExperimentKind::ScalingStudy => {
                if lambdas.len() < 4 || lambdas.windows(2).any(|w| !(w[0] < w[1])) || !(lambdas[0] > 0.0) {
                    errors.push("run.lambdas must be ≥ 4 positive, strictly increasing values".into());
                }
            }
            ExperimentKind::GradientCheck => {
                if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0)) {
                    errors.push("run.epsilons must be positive".into());
                }
            }
            ExperimentKind::DensityStudy => {
                if paths.is_some_and(|n| (n as usize) < crate::malliavin::MIN_KDE_SAMPLES) {
                    errors.push(format!(
                        "density_study needs run.paths ≥ {}",
                        crate::malliavin::MIN_KDE_SAMPLES
                    ));
                }
                if lattice < 2 {
                    errors.push("run.lattice must be at least 2".into());
                }
            }
            ExperimentKind::BoundPolynomial
                if family.as_ref().and_then(|f| f.build(d, m).ok()).is_some_and(|b| b.constants().sigma_sup.is_none()) =>
            {
                errors.push("bound_polynomial needs a family with bounded diffusion".into());
            }
            ExperimentKind::IntegralValidate if m != 1 => {
                errors.push("integral_validate needs model.m = 1".into());
            }
            _ => {}
        }
    }
    if let Some(c) = constant {
        if !(c > 0.0) {
            errors.push(format!("run.constant must be positive, got {c}"));
        }
    }

    if !errors.is_empty() {
        return Err(Error::ConfigInvalid(errors));
    }
    Ok(ExperimentConfig {
        experiment: experiment.unwrap(),
        hurst: hurst.unwrap(),
        alpha: alpha.unwrap(),
        beta: beta.unwrap(),
        delta: delta.unwrap(),
        mu: mu.unwrap(),
        horizon: horizon.unwrap(),
        steps: steps.unwrap() as usize,
        d,
        m,
        family: family.unwrap(),
        x0,
        linear,
        paths: paths.unwrap() as usize,
        seed: seed.unwrap(),
        lambdas,
        epsilons,
        lattice,
        constant,
        workers,
        output,
    })
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    from_raw(parse_text(text)?)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    parse_config(&text)
}

impl ExperimentConfig {
    /// Canonical JSON of every field that affects results.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`Self::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "\
experiment = bound_polynomial   # trailing comment
seed = 7

[fbm]
hurst = 0.75

[params]
alpha = 0.3
beta = 1
delta = 1.0e0
mu = 1

[grid]
horizon = 1
steps = 64

[model]
family = sinusoidal
amplitude = 2.5
x0 = 0.5

[run]
paths = 4
";

    #[test]
    fn accepts_admissible_config() {
        let c = parse_config(GOOD).unwrap();
        assert_eq!(c.experiment, ExperimentKind::BoundPolynomial);
        assert_eq!(c.seed, 7);
        assert_eq!(c.x0, vec![0.5]);
        match c.family {
            Family::Sinusoidal { amplitude, omega, .. } => {
                assert_eq!(amplitude, 2.5);
                assert_eq!(omega, 0.5);
            }
            ref f => panic!("{f:?}"),
        }
    }

    #[test]
    fn rejects_small_alpha_with_message() {
        let text = GOOD.replace("alpha = 0.3", "alpha = 0.2");
        match parse_config(&text) {
            Err(Error::ConfigInvalid(v)) => assert!(v.contains(&"α must exceed 1−H=0.25".to_string()), "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_seed_named() {
        let text = GOOD.replace("seed = 7\n", "");
        match parse_config(&text) {
            Err(Error::ConfigInvalid(v)) => assert!(v.iter().any(|e| e.contains("'seed'"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reports_every_violation() {
        let text = GOOD
            .replace("alpha = 0.3", "alpha = 0.6")
            .replace("steps = 64", "steps = 8")
            .replace("paths = 4", "paths = 0")
            .replace("seed = 7\n", "");
        match parse_config(&text) {
            Err(Error::ConfigInvalid(v)) => {
                assert!(v.iter().any(|e| e.contains("seed")));
                assert!(v.iter().any(|e| e.contains("below 1/2")));
                assert!(v.iter().any(|e| e.contains("δ/(1+δ)")));
                assert!(v.iter().any(|e| e.contains("grid.steps")));
                assert!(v.iter().any(|e| e.contains("run.paths")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line() {
        match parse_config("experiment = fbm_validate\nthis line is wrong\n") {
            Err(Error::ConfigParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_config("seed = 1\nseed = 2\n") {
            Err(Error::ConfigParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_config("[fbm\n") {
            Err(Error::ConfigParse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        let text = format!("{GOOD}\nbogus = 1\n").replace("amplitude = 2.5", "amplitude = lots");
        match parse_config(&text) {
            Err(Error::ConfigInvalid(v)) => {
                assert!(v.iter().any(|e| e.contains("run.bogus")));
                assert!(v.iter().any(|e| e.contains("model.amplitude")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_ignores_workers_and_output() {
        let a = parse_config(GOOD).unwrap();
        let b = parse_config(&format!("{GOOD}workers = 8\noutput = /tmp/x\n")).unwrap();
        assert_eq!(b.workers, 8);
        assert_eq!(a.hash(), b.hash());
        let c = parse_config(&GOOD.replace("seed = 7", "seed = 8")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
