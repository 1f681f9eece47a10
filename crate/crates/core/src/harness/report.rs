//! Experiment reports and their on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::grid::{ScalarField, TorusGrid};
use crate::io::{num, save_field, save_pair_field, Table};

/// One checked quantity: `value` against `reference` with a tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Metric {
    /// Passes iff `|value - reference| <= tolerance`.
    pub fn within(name: &str, value: f64, reference: f64, tolerance: f64) -> Self {
        let passed = (value - reference).abs() <= tolerance;
        Metric { name: name.into(), value, reference, tolerance, passed }
    }

    /// Passes iff `|value - reference| <= rel |reference|`.
    pub fn relative(name: &str, value: f64, reference: f64, rel: f64) -> Self {
        Metric::within(name, value, reference, rel * reference.abs())
    }

    /// Passes iff `value <= bound`.
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Metric { name: name.into(), value, reference: 0.0, tolerance: bound, passed: value <= bound }
    }

    /// Passes iff `value >= bound`.
    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Metric { name: name.into(), value, reference: 0.0, tolerance: bound, passed: value >= bound }
    }

    /// Passes iff `flag`.
    pub fn flag(name: &str, flag: bool) -> Self {
        let v = if flag { 1.0 } else { 0.0 };
        Metric { name: name.into(), value: v, reference: 1.0, tolerance: 0.0, passed: flag }
    }

    /// Informational value, always passes.
    pub fn info(name: &str, value: f64) -> Self {
        Metric { name: name.into(), value, reference: f64::NAN, tolerance: f64::NAN, passed: true }
    }
}

#[derive(Debug, Clone)]
pub enum FieldArtifact {
    Field(ScalarField),
    Pair { base: TorusGrid, values: Vec<f64> },
}

/// Outcome of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub replicas: u64,
    pub metrics: Vec<Metric>,
    pub tables: Vec<(String, Table)>,
    pub fields: Vec<(String, FieldArtifact)>,
    pub wall_clock_seconds: f64,
    pub workers: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: ExperimentKind,
    config_hash: &'a str,
    seed: u64,
    replicas: u64,
    passed: bool,
    metrics: &'a [Metric],
    files: Vec<String>,
    rng: &'static str,
    workers: usize,
    wall_clock_seconds: f64,
    config: String,
}

impl ExperimentReport {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        ExperimentReport {
            experiment: cfg.kind(),
            config_hash: cfg.hash(),
            seed: cfg.statistics.seed,
            replicas: cfg.statistics.replicas,
            metrics: Vec::new(),
            tables: Vec::new(),
            fields: Vec::new(),
            wall_clock_seconds: 0.0,
            workers: 0,
        }
    }

    pub fn passed(&self) -> bool {
        self.metrics.iter().all(|m| m.passed)
    }

    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn metrics_table(&self) -> Table {
        let mut t = Table::new(&["metric", "value", "reference", "tolerance", "passed"]);
        for m in &self.metrics {
            t.push(vec![m.name.clone(), num(m.value), num(m.reference), num(m.tolerance), m.passed.to_string()]);
        }
        t
    }

    /// Writes `metrics.csv`, every table, every field dump and
    /// `manifest.json` into `dir`. Returns the written paths.
    pub fn write(&self, dir: impl AsRef<Path>, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let p = dir.join("metrics.csv");
        self.metrics_table().save(&p)?;
        written.push(p);
        for (name, t) in &self.tables {
            let p = dir.join(format!("{name}.csv"));
            t.save(&p)?;
            written.push(p);
        }
        for (name, f) in &self.fields {
            let p = dir.join(format!("{name}.ewf"));
            match f {
                FieldArtifact::Field(f) => save_field(&p, f)?,
                FieldArtifact::Pair { base, values } => save_pair_field(&p, base, values)?,
            }
            written.push(p);
        }
        let manifest = Manifest {
            experiment: self.experiment,
            config_hash: &self.config_hash,
            seed: self.seed,
            replicas: self.replicas,
            passed: self.passed(),
            metrics: &self.metrics,
            files: written.iter().filter_map(|p| p.file_name()).map(|s| s.to_string_lossy().into_owned()).collect(),
            rng: "ChaCha8 keyed by (seed, replica, purpose), stream position = step",
            workers: self.workers,
            wall_clock_seconds: self.wall_clock_seconds,
            config: cfg.to_toml(),
        };
        let p = dir.join("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(&manifest)?)?;
        written.push(p);
        Ok(written)
    }

    /// One line per metric.
    pub fn summary(&self) -> String {
        let mut s = format!("{} [{}]\n", self.experiment, if self.passed() { "PASS" } else { "FAIL" });
        for m in &self.metrics {
            s.push_str(&format!(
                "  {:<5} {:<28} value={:<14.6e} reference={:<14.6e} tolerance={:.3e}\n",
                if m.passed { "ok" } else { "FAIL" },
                m.name,
                m.value,
                m.reference,
                m.tolerance
            ));
        }
        s
    }
}
