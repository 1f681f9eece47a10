//! TOML experiment configuration.
//!
//! ```toml
//! [experiment]
//! name = "mean"
//!
//! [covariance]
//! kind = "compressible"     # or "incompressible" with g0, zeta
//! amplitude = 1.0
//! radius = 1.0
//!
//! [grid]
//! dim = 1
//! length = 16.0
//! points = 256
//!
//! [dynamics]
//! kappa = 0.5
//! horizon = 1.0
//! dt = 1e-3
//!
//! [statistics]
//! replicas = 200
//! seed = 1
//!
//! [initial]
//! kind = "gaussian"
//! sigma = 0.5
//!
//! [output]
//! dir = "out/mean"
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::{CompressibleProfile, CovarianceKind, CovarianceSpec, GridCovariance};
use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid};
use crate::spde::{gaussian_density, steps_for, transport_dt_limit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Mean,
    Scaling,
    Qv,
    Clt,
    Corrpde,
    Stationary,
    Msd,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Mean,
        ExperimentKind::Scaling,
        ExperimentKind::Qv,
        ExperimentKind::Clt,
        ExperimentKind::Corrpde,
        ExperimentKind::Stationary,
        ExperimentKind::Msd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Mean => "mean",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::Qv => "qv",
            ExperimentKind::Clt => "clt",
            ExperimentKind::Corrpde => "corrpde",
            ExperimentKind::Stationary => "stationary",
            ExperimentKind::Msd => "msd",
        }
    }

    fn needs_initial(self) -> bool {
        !matches!(self, ExperimentKind::Stationary)
    }

    fn needs_test_function(self) -> bool {
        matches!(self, ExperimentKind::Qv | ExperimentKind::Clt | ExperimentKind::Msd)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSection {
    pub name: ExperimentKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSection {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// `convolved_bump` (default) or `bump`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSection {
    pub dim: usize,
    pub length: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSection {
    pub kappa: f64,
    pub horizon: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticsSection {
    pub replicas: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    /// Number of evenly spaced record times on `(0, horizon]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observe: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quenched_particles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resamples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSection {
    /// `gaussian` (uses `sigma`) or `bump` (uses `radius`); centred in the box.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionSection {
    /// `sine`, `cosine` (along the first axis, uses `mode`) or `bump`
    /// (uses `center` and `radius`).
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub dir: String,
}

/// Pointwise test function.
pub type TestFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub covariance: CovarianceSection,
    pub grid: GridSection,
    pub dynamics: DynamicsSection,
    pub statistics: StatisticsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_function: Option<TestFunctionSection>,
    pub output: OutputSection,
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("experiment", &["name"]),
    ("covariance", &["kind", "amplitude", "radius", "profile", "g0", "zeta"]),
    ("grid", &["dim", "length", "points"]),
    ("dynamics", &["kappa", "horizon", "dt"]),
    (
        "statistics",
        &[
            "replicas",
            "seed",
            "n",
            "n_list",
            "alpha",
            "records",
            "tolerance",
            "stderr_factor",
            "level",
            "burn_in",
            "observe",
            "every",
            "particles",
            "paths",
            "quenched_particles",
            "resamples",
            "bound_cap",
            "t_min",
        ],
    ),
    ("initial", &["kind", "sigma", "radius"]),
    ("test_function", &["kind", "mode", "center", "radius"]),
    ("output", &["dir"]),
];

const REQUIRED: &[&str] = &["experiment", "covariance", "grid", "dynamics", "statistics", "output"];

/// Strict parse: unknown keys are errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with(text, true)
}

/// Parses and validates, collecting every violation found.
pub fn parse_config_with(text: &str, strict: bool) -> Result<ExperimentConfig> {
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    let mut errors = Vec::new();
    let schema: BTreeMap<&str, &[&str]> = SCHEMA.iter().copied().collect();
    let sections: Vec<String> = doc.keys().cloned().collect();
    for name in sections {
        match schema.get(name.as_str()) {
            None => {
                if strict {
                    errors.push(Error::UnknownKey(name.clone()));
                }
                doc.remove(&name);
            }
            Some(keys) => match doc.get_mut(&name) {
                Some(toml::Value::Table(t)) => {
                    let present: Vec<String> = t.keys().cloned().collect();
                    for k in present {
                        if !keys.contains(&k.as_str()) {
                            if strict {
                                errors.push(Error::UnknownKey(format!("{name}.{k}")));
                            }
                            t.remove(&k);
                        }
                    }
                }
                _ => errors.push(Error::Config(format!("'{name}' must be a table"))),
            },
        }
    }
    for s in REQUIRED {
        if !doc.contains_key(*s) {
            errors.push(Error::MissingSection((*s).to_string()));
        }
    }
    if !errors.is_empty() {
        return Err(collect(errors));
    }
    let cfg: ExperimentConfig =
        toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn collect(mut errors: Vec<Error>) -> Error {
    if errors.len() == 1 {
        errors.pop().unwrap()
    } else {
        Error::ConfigErrors(errors)
    }
}

fn violation(msg: impl Into<String>) -> Error {
    Error::ConstraintViolation(msg.into())
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn kind(&self) -> ExperimentKind {
        self.experiment.name
    }

    pub fn covariance_spec(&self) -> Result<CovarianceSpec> {
        let c = &self.covariance;
        let d = self.grid.dim;
        match c.kind.as_str() {
            "compressible" => {
                let amp = c.amplitude.ok_or_else(|| violation("covariance.amplitude is required for compressible"))?;
                let radius = c.radius.ok_or_else(|| violation("covariance.radius is required for compressible"))?;
                let profile = match c.profile.as_deref() {
                    None | Some("convolved_bump") => CompressibleProfile::ConvolvedBump,
                    Some("bump") => CompressibleProfile::Bump,
                    Some(p) => {
                        return Err(violation(format!("covariance.profile '{p}' is not one of convolved_bump, bump")))
                    }
                };
                Ok(CovarianceSpec::compressible(d, amp, radius).with_profile(profile))
            }
            "incompressible" => {
                let g0 = c.g0.ok_or_else(|| violation("covariance.g0 is required for incompressible"))?;
                let zeta = c.zeta.ok_or_else(|| violation("covariance.zeta is required for incompressible"))?;
                Ok(CovarianceSpec::incompressible(d, g0, zeta))
            }
            k => Err(violation(format!("covariance.kind '{k}' is not one of compressible, incompressible"))),
        }
    }

    pub fn torus(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.grid.dim, self.grid.points, self.grid.length)
    }

    pub fn initial_field(&self, grid: &TorusGrid) -> Result<ScalarField> {
        let init = self.initial.as_ref().ok_or_else(|| Error::MissingSection("initial".into()))?;
        match init.kind.as_str() {
            "gaussian" => {
                let s = init.sigma.ok_or_else(|| violation("initial.sigma is required for gaussian"))?;
                if !(s > 0.0) {
                    return Err(violation("initial.sigma > 0"));
                }
                Ok(gaussian_density(grid, s))
            }
            "bump" => {
                let r = init.radius.ok_or_else(|| violation("initial.radius is required for bump"))?;
                if !(r > 0.0 && r < grid.length() / 2.0) {
                    return Err(violation("0 < initial.radius < L/2"));
                }
                let c = vec![grid.length() / 2.0; grid.dim()];
                let f = bump(grid, &c, r);
                let mass = f.integral();
                Ok(f.scaled(1.0 / mass))
            }
            k => Err(violation(format!("initial.kind '{k}' is not one of gaussian, bump"))),
        }
    }

    pub fn test_field(&self, grid: &TorusGrid) -> Result<ScalarField> {
        let g = self.test_closure(grid)?;
        Ok(ScalarField::from_fn(grid, |x| g(x)))
    }

    /// The test function as a map on the torus, for particle averages.
    pub fn test_closure(&self, grid: &TorusGrid) -> Result<TestFn> {
        let t = self.test_function.as_ref().ok_or_else(|| Error::MissingSection("test_function".into()))?;
        let l = grid.length();
        match t.kind.as_str() {
            "sine" | "cosine" => {
                let m = t.mode.unwrap_or(1) as f64;
                if 2.0 * m >= grid.points() as f64 {
                    return Err(violation("test_function.mode < N/2"));
                }
                let k = 2.0 * std::f64::consts::PI * m / l;
                Ok(if t.kind == "sine" {
                    Box::new(move |x: &[f64]| (k * x[0]).sin())
                } else {
                    Box::new(move |x: &[f64]| (k * x[0]).cos())
                })
            }
            "bump" => {
                let r = t.radius.ok_or_else(|| violation("test_function.radius is required for bump"))?;
                let c = t.center.clone().unwrap_or_else(|| vec![l / 2.0; grid.dim()]);
                if c.len() != grid.dim() {
                    return Err(violation(format!(
                        "test_function.center has {} entries, grid.dim = {}",
                        c.len(),
                        grid.dim()
                    )));
                }
                if !(r > 0.0 && r < l / 2.0) {
                    return Err(violation("0 < test_function.radius < L/2"));
                }
                Ok(Box::new(move |x: &[f64]| bump_at(x, &c, r, l)))
            }
            k => Err(violation(format!("test_function.kind '{k}' is not one of sine, cosine, bump"))),
        }
    }

    /// Record times `k T / records`, `k = 1..=records`.
    pub fn record_times(&self, default: usize) -> Vec<f64> {
        let m = self.statistics.records.unwrap_or(default).max(1);
        (1..=m).map(|k| self.dynamics.horizon * k as f64 / m as f64).collect()
    }

    /// Checks every constraint, reporting all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let g = &self.grid;
        if !(1..=3).contains(&g.dim) {
            errs.push(violation(format!("1 <= grid.dim <= 3, got {}", g.dim)));
        }
        if g.points < 8 || !g.points.is_power_of_two() {
            errs.push(violation(format!("grid.points a power of two >= 8, got {}", g.points)));
        }
        if !(g.length > 0.0) {
            errs.push(violation(format!("grid.length > 0, got {}", g.length)));
        }
        let dy = &self.dynamics;
        if !(dy.kappa > 0.0) {
            errs.push(violation(format!("dynamics.kappa > 0, got {}", dy.kappa)));
        }
        if !(dy.horizon > 0.0) {
            errs.push(violation(format!("dynamics.horizon > 0, got {}", dy.horizon)));
        } else if let Err(e) = steps_for(dy.horizon, dy.dt) {
            errs.push(violation(format!("dynamics.horizon a positive multiple of dynamics.dt: {e}")));
        }
        let st = &self.statistics;
        if st.replicas == 0 {
            errs.push(violation("statistics.replicas >= 1"));
        }
        if let Some(t) = st.tolerance {
            if !(t > 0.0) {
                errs.push(violation("statistics.tolerance > 0"));
            }
        }
        if let Some(k) = st.stderr_factor {
            if !(k > 0.0) {
                errs.push(violation("statistics.stderr_factor > 0"));
            }
        }
        let kind = self.kind();
        if kind.needs_initial() && self.initial.is_none() {
            errs.push(Error::MissingSection("initial".into()));
        }
        if kind.needs_test_function() && self.test_function.is_none() {
            errs.push(Error::MissingSection("test_function".into()));
        }
        match kind {
            ExperimentKind::Scaling => {
                let ns = st.n_list.clone().unwrap_or_default();
                let mut distinct = ns.clone();
                distinct.sort_unstable();
                distinct.dedup();
                if distinct.len() < 3 || ns.contains(&0) {
                    errs.push(violation("statistics.n_list holds at least 3 distinct positive values"));
                }
                let d = g.dim as f64;
                match &st.alpha {
                    Some(a) if !a.is_empty() => {
                        for &al in a {
                            if !(al > d / 2.0 && al < d / 2.0 + 1.0) {
                                errs.push(violation(format!("d/2 < alpha < d/2 + 1, got alpha = {al}")));
                            }
                        }
                    }
                    _ => errs.push(violation("statistics.alpha is required for scaling")),
                }
            }
            ExperimentKind::Qv | ExperimentKind::Clt => {
                if st.n.unwrap_or(1) == 0 {
                    errs.push(violation("statistics.n >= 1"));
                }
                if kind == ExperimentKind::Clt && st.replicas < 100 {
                    errs.push(violation("statistics.replicas >= 100 for the normality test"));
                }
            }
            ExperimentKind::Corrpde => {
                if g.dim != 1 {
                    errs.push(violation("corrpde requires grid.dim = 1"));
                }
                if st.replicas < 200 {
                    errs.push(violation("statistics.replicas >= 200 for the two-point estimate"));
                }
            }
            ExperimentKind::Stationary => {
                if g.dim != 1 {
                    errs.push(violation("stationary requires grid.dim = 1"));
                }
                if self.covariance.kind != "compressible" {
                    errs.push(violation("stationary requires a compressible covariance"));
                }
                for (k, v) in [("burn_in", st.burn_in), ("observe", st.observe), ("every", st.every)] {
                    match v {
                        Some(x) if x > 0.0 => {
                            if let Err(e) = steps_for(x, dy.dt) {
                                errs.push(violation(format!("statistics.{k} a multiple of dynamics.dt: {e}")));
                            }
                        }
                        _ => errs.push(violation(format!("statistics.{k} > 0 is required for stationary"))),
                    }
                }
            }
            ExperimentKind::Msd | ExperimentKind::Mean => {}
        }
        if errs.is_empty() {
            match self.covariance_spec().and_then(|s| {
                s.validate()?;
                Ok(s)
            }) {
                Err(e @ Error::ConstraintViolation(_)) => errs.push(e),
                Err(e) => errs.push(violation(format!("covariance: {e}"))),
                Ok(spec) => self.check_grid(&spec, &mut errs),
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(collect(errs))
        }
    }

    fn check_grid(&self, spec: &CovarianceSpec, errs: &mut Vec<Error>) {
        let grid = match self.torus() {
            Ok(g) => g,
            Err(e) => return errs.push(violation(format!("grid: {e}"))),
        };
        let cov = match GridCovariance::new(spec, &grid) {
            Ok(c) => c,
            Err(e) => return errs.push(violation(format!("grid resolution: {e}"))),
        };
        let nu = spec.nu();
        let dt = self.dynamics.dt;
        let lhs = (2.0 * nu * dt).sqrt() * cov.xi_rms();
        if lhs > 0.25 * (1.0 + 1e-12) {
            errs.push(violation(format!(
                "sqrt(2 nu dt) |xi| <= 0.25 violated with |xi| = xi_rms = {:.4}: sqrt(2 * {nu} * {dt}) * {:.4} = {lhs:.4}; \
                 largest admissible dt is {:.3e}",
                cov.xi_rms(),
                cov.xi_rms(),
                transport_dt_limit(&cov)
            )));
        }
        if self.kind() == ExperimentKind::Stationary && spec.kind() != CovarianceKind::Compressible {
            errs.push(violation("stationary requires a compressible covariance"));
        }
        for (section, present) in [("initial", self.initial.is_some()), ("test_function", self.test_function.is_some())]
        {
            if !present {
                continue;
            }
            let r = if section == "initial" { self.initial_field(&grid) } else { self.test_field(&grid) };
            if let Err(e) = r {
                errs.push(match e {
                    Error::ConstraintViolation(_) => e,
                    other => violation(format!("{section}: {other}")),
                });
            }
        }
    }
}

/// Smooth bump `exp(1 - 1/(1 - r^2/R^2))` around `center`, periodized by
/// minimal image.
pub fn bump(grid: &TorusGrid, center: &[f64], radius: f64) -> ScalarField {
    let l = grid.length();
    ScalarField::from_fn(grid, |x| bump_at(x, center, radius, l))
}

fn bump_at(x: &[f64], center: &[f64], radius: f64, l: f64) -> f64 {
    let mut r2 = 0.0;
    for (a, c) in x.iter().zip(center) {
        let mut dx = (a - c).rem_euclid(l);
        if dx > l / 2.0 {
            dx -= l;
        }
        r2 += dx * dx;
    }
    let s = r2 / (radius * radius);
    if s >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s)).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const MINIMAL: &str = r#"
[experiment]
name = "mean"

[covariance]
kind = "compressible"
amplitude = 1.0
radius = 1.0

[grid]
dim = 1
length = 16.0
points = 256

[dynamics]
kappa = 0.5
horizon = 1.0
dt = 0.001

[statistics]
replicas = 200
seed = 7

[initial]
kind = "gaussian"
sigma = 0.5

[output]
dir = "out/mean"
"#;

    #[test]
    fn minimal_roundtrip() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.kind(), ExperimentKind::Mean);
        let again = parse_config(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn unknown_key_named() {
        let text = MINIMAL.replace("kappa = 0.5", "kapa = 0.5");
        match parse_config(&text) {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "dynamics.kapa"),
            other => panic!("{other:?}"),
        }
        let lenient = parse_config_with(&text.replace("kapa = 0.5", "kapa = 0.5\nkappa = 0.5"), false).unwrap();
        assert_eq!(lenient.dynamics.kappa, 0.5);
    }

    #[test]
    fn every_violation_listed() {
        let text = MINIMAL.replace("[output]\ndir = \"out/mean\"\n", "").replace("kappa = 0.5", "kapa = 0.5")
            + "\n[extra]\nx = 1\n";
        match parse_config(&text) {
            Err(Error::ConfigErrors(v)) => {
                assert!(v.iter().any(|e| matches!(e, Error::UnknownKey(k) if k == "dynamics.kapa")));
                assert!(v.iter().any(|e| matches!(e, Error::UnknownKey(k) if k == "extra")));
                assert!(v.iter().any(|e| matches!(e, Error::MissingSection(s) if s == "output")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dt_rule_violation_cites_inequality() {
        let text = MINIMAL.replace("dt = 0.001", "dt = 0.01");
        match parse_config(&text) {
            Err(Error::ConstraintViolation(m)) => {
                assert!(m.contains("sqrt(2 nu dt) |xi| <= 0.25"), "{m}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constraint_errors() {
        let bad_points = MINIMAL.replace("points = 256", "points = 100");
        assert!(matches!(parse_config(&bad_points), Err(Error::ConstraintViolation(_))));
        let coarse = MINIMAL.replace("points = 256", "points = 64");
        assert!(matches!(parse_config(&coarse), Err(Error::ConstraintViolation(m)) if m.contains("resolution")));
        let scaling = MINIMAL.replace("\"mean\"", "\"scaling\"");
        assert!(parse_config(&scaling).is_err());
        let ok = scaling.replace("seed = 7", "seed = 7\nn_list = [2, 4, 8]\nalpha = [0.75]");
        assert!(parse_config(&ok).is_ok());
        let negative_seed = MINIMAL.replace("seed = 7", "seed = -1");
        assert!(matches!(parse_config(&negative_seed), Err(Error::Config(_))));
        let no_initial = MINIMAL.replace("[initial]\nkind = \"gaussian\"\nsigma = 0.5\n", "");
        assert!(matches!(parse_config(&no_initial), Err(Error::MissingSection(s)) if s == "initial"));
    }

    #[test]
    fn fields_from_sections() {
        let cfg = parse_config(MINIMAL).unwrap();
        let grid = cfg.torus().unwrap();
        let phi = cfg.initial_field(&grid).unwrap();
        assert!((phi.integral() - 1.0).abs() < 1e-12);
        let t = TestFunctionSection { kind: "bump".into(), mode: None, center: Some(vec![3.0]), radius: Some(2.0) };
        let cfg2 = ExperimentConfig { test_function: Some(t), ..cfg };
        let f = cfg2.test_field(&grid).unwrap();
        assert_eq!(f.sup_norm(), 1.0);
        assert_eq!(cfg2.record_times(4), vec![0.25, 0.5, 0.75, 1.0]);
    }
}
