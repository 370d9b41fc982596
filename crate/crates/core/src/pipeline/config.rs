//! Run configuration file.
//!
//! ```toml
//! # Paths are relative to this file.
//! structures = "structures.geojson"
//! neighborhoods = "neighborhoods.geojson"
//! population = "population.asc"
//! ontology = "ontology.toml"      # optional, the bundled ontology otherwise
//! output = "out"
//! origin = [106.8, -6.2]          # projection origin, lon/lat degrees
//! weights = "queen"               # or "knn:<k>"
//! n_perm = 999
//! seed = 7
//! alpha_map = 0.05
//! alpha_report = 0.001
//! workers = 1
//!
//! [group_rasters]
//! muslim = "group_muslim.asc"
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Stage};
use crate::geo::{GeoPoint, Projection};
use crate::stats::{LisaConfig, Normalization, WeightScheme};

fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_weights() -> String {
    "queen".into()
}
fn default_n_perm() -> usize {
    999
}
fn default_alpha_map() -> f64 {
    0.05
}
fn default_alpha_report() -> f64 {
    0.001
}
fn default_workers() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    structures: PathBuf,
    neighborhoods: PathBuf,
    population: PathBuf,
    ontology: Option<PathBuf>,
    #[serde(default = "default_output")]
    output: PathBuf,
    origin: [f64; 2],
    #[serde(default = "default_weights")]
    weights: String,
    #[serde(default = "default_n_perm")]
    n_perm: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_alpha_map")]
    alpha_map: f64,
    #[serde(default = "default_alpha_report")]
    alpha_report: f64,
    #[serde(default)]
    permissive: bool,
    #[serde(default)]
    bonferroni: bool,
    #[serde(default)]
    normalization: Normalization,
    #[serde(default = "default_workers")]
    workers: usize,
    #[serde(default)]
    group_rasters: BTreeMap<String, PathBuf>,
}

/// A resolved run configuration. All paths are absolute or relative to the
/// working directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub structures: PathBuf,
    pub neighborhoods: PathBuf,
    pub population: PathBuf,
    pub ontology: Option<PathBuf>,
    pub group_rasters: BTreeMap<String, PathBuf>,
    pub output: PathBuf,
    pub origin: GeoPoint,
    #[serde(serialize_with = "display")]
    pub weights: WeightScheme,
    pub n_perm: usize,
    pub seed: u64,
    pub alpha_map: f64,
    pub alpha_report: f64,
    pub permissive: bool,
    pub bonferroni: bool,
    pub normalization: Normalization,
    pub workers: usize,
}

fn display<S: serde::Serializer>(w: &WeightScheme, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(w)
}

fn config_err(message: impl Into<String>) -> PipelineError {
    PipelineError::new(Stage::Config, message)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    /// Parse config text, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let f: ConfigFile = toml::from_str(text).map_err(|e| config_err(format!("config: {e}")))?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let origin = GeoPoint::new(f.origin[0], f.origin[1]).map_err(|e| config_err(format!("origin: {e}")))?;
        let weights = f.weights.parse().map_err(config_err)?;
        Ok(RunConfig {
            structures: resolve(f.structures),
            neighborhoods: resolve(f.neighborhoods),
            population: resolve(f.population),
            ontology: f.ontology.map(resolve),
            group_rasters: f.group_rasters.into_iter().map(|(g, p)| (g, resolve(p))).collect(),
            output: resolve(f.output),
            origin,
            weights,
            n_perm: f.n_perm,
            seed: f.seed,
            alpha_map: f.alpha_map,
            alpha_report: f.alpha_report,
            permissive: f.permissive,
            bonferroni: f.bonferroni,
            normalization: f.normalization,
            workers: f.workers,
        })
    }

    /// Check parameter ranges and that every input file exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.n_perm < 99 {
            return Err(config_err(format!("n_perm must be >= 99, got {}", self.n_perm)));
        }
        for (name, alpha) in [("alpha_map", self.alpha_map), ("alpha_report", self.alpha_report)] {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(config_err(format!("{name} must lie in (0, 1), got {alpha}")));
            }
        }
        if self.workers == 0 {
            return Err(config_err("workers must be >= 1"));
        }
        let mut inputs: Vec<&Path> = vec![&self.structures, &self.neighborhoods, &self.population];
        inputs.extend(self.ontology.as_deref());
        inputs.extend(self.group_rasters.values().map(PathBuf::as_path));
        for p in inputs {
            if !p.is_file() {
                return Err(config_err(format!("input file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn projection(&self) -> Projection {
        Projection::new(self.origin)
    }

    fn lisa_config(&self, alpha: f64) -> LisaConfig {
        LisaConfig {
            n_perm: self.n_perm,
            seed: self.seed,
            alpha,
            normalization: self.normalization,
            bonferroni: self.bonferroni,
        }
    }

    /// Settings for the mapped LISA run.
    pub fn lisa_map_config(&self) -> LisaConfig {
        self.lisa_config(self.alpha_map)
    }

    /// Report threshold after any multiple-comparison correction.
    pub fn report_alpha(&self, n: usize) -> f64 {
        self.lisa_config(self.alpha_report).effective_alpha(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
structures = "s.geojson"
neighborhoods = "n.geojson"
population = "p.asc"
origin = [106.8, -6.2]
"#;

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = RunConfig::parse(MINIMAL, Path::new("/data/city")).unwrap();
        assert_eq!(cfg.structures, PathBuf::from("/data/city/s.geojson"));
        assert_eq!(cfg.output, PathBuf::from("/data/city/out"));
        assert_eq!(cfg.weights, WeightScheme::Queen);
        assert_eq!((cfg.n_perm, cfg.seed, cfg.workers), (999, 0, 1));
        assert_eq!((cfg.alpha_map, cfg.alpha_report), (0.05, 0.001));
        assert_eq!(cfg.ontology, None);
    }

    #[test]
    fn validation_errors_are_config_errors() {
        let mut cfg = RunConfig::parse(MINIMAL, Path::new("/nonexistent")).unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("/nonexistent/s.geojson"), "{err}");
        cfg.n_perm = 50;
        assert!(cfg.validate().unwrap_err().to_string().contains("n_perm"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_schemes() {
        assert!(RunConfig::parse(&format!("{MINIMAL}colour = 1\n"), Path::new("")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}weights = \"rook\"\n"), Path::new("")).is_err());
        let knn = RunConfig::parse(&format!("{MINIMAL}weights = \"knn:5\"\n"), Path::new("")).unwrap();
        assert_eq!(knn.weights, WeightScheme::Knn(5));
    }
}
