//! Experiment configuration files.

use std::path::{Path, PathBuf};

use missfit_core::datagen::{GeneratorSpec, Mechanism, Setting, SignalKind};
use missfit_core::methods::{Grids, Method};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Synthetic generator settings; the seed comes from the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    /// Rows per replication, before the train/test split.
    pub n: usize,
    #[serde(default = "defaults::d")]
    pub d: usize,
    #[serde(default = "defaults::r")]
    pub r: usize,
    #[serde(default = "defaults::eps")]
    pub eps: f64,
    #[serde(default = "defaults::signal")]
    pub signal: SignalKind,
    #[serde(default = "defaults::k")]
    pub k: usize,
    #[serde(default = "defaults::snr")]
    pub snr: f64,
    pub mechanism: Mechanism,
}

impl SyntheticSource {
    pub fn spec(&self, seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            n: self.n,
            d: self.d,
            r: self.r,
            eps: self.eps,
            signal: self.signal,
            k: self.k,
            snr: self.snr,
            mechanism: self.mechanism,
            seed,
        }
    }
}

/// A real feature matrix with a synthetic response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiSyntheticSource {
    /// CSV with missing cells; supplies the mask.
    pub path: PathBuf,
    /// Complete (imputed) CSV with the same feature columns.
    pub full_path: PathBuf,
    /// Column to drop from both files, if present.
    #[serde(default)]
    pub target: Option<String>,
    pub setting: Setting,
    #[serde(default)]
    pub k: Option<usize>,
    pub k_missing: usize,
    #[serde(default = "defaults::signal")]
    pub signal: SignalKind,
    #[serde(default = "defaults::snr")]
    pub snr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Source {
    Synthetic(SyntheticSource),
    Semisynthetic(SemiSyntheticSource),
    Csv(CsvSource),
}

impl Source {
    /// Value of the `setting` column in results.
    pub fn setting(&self) -> String {
        match self {
            Self::Synthetic(s) => format!("{}_p{}", s.mechanism.name(), s.mechanism.p()),
            Self::Semisynthetic(s) => s.setting.name().to_string(),
            Self::Csv(_) => "real".to_string(),
        }
    }

    pub fn has_ground_truth(&self) -> bool {
        !matches!(self, Self::Csv(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Value of the `dataset` column in results.
    pub name: String,
    pub source: Source,
    pub methods: Vec<Method>,
    #[serde(default = "defaults::replications")]
    pub replications: usize,
    #[serde(default = "defaults::test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "defaults::folds")]
    pub folds: usize,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    use super::SignalKind;

    pub fn d() -> usize {
        10
    }
    pub fn r() -> usize {
        5
    }
    pub fn eps() -> f64 {
        0.1
    }
    pub fn signal() -> SignalKind {
        SignalKind::Linear
    }
    pub fn k() -> usize {
        5
    }
    pub fn snr() -> f64 {
        2.0
    }
    pub fn replications() -> usize {
        10
    }
    pub fn test_fraction() -> f64 {
        0.3
    }
    pub fn folds() -> usize {
        5
    }
}

fn config_error(at: &str, message: impl std::fmt::Display) -> Error {
    Error::Config(format!("at `{at}`: {message}"))
}

impl ExperimentConfig {
    /// Loads and validates a config. Relative data paths are resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(path, &text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        match &mut cfg.source {
            Source::Semisynthetic(s) => {
                s.path = base.join(&s.path);
                s.full_path = base.join(&s.full_path);
            }
            Source::Csv(s) => s.path = base.join(&s.path),
            Source::Synthetic(_) => {}
        }
        cfg.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        Ok(cfg)
    }

    /// Parses without validating. Tagged sources hide the inner field in
    /// serde's error path, so a failure at `source` is re-parsed untagged.
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let err = match io::parse_json::<Self>(path, text) {
            Ok(cfg) => return Ok(cfg),
            Err(e) => e,
        };
        let Error::Json { at, .. } = &err else { return Err(err) };
        if at != "source" {
            return Err(err);
        }
        let Ok(serde_json::Value::Object(mut doc)) = serde_json::from_str(text) else { return Err(err) };
        let Some(serde_json::Value::Object(mut source)) = doc.remove("source") else { return Err(err) };
        let kind = source.remove("type");
        let body = serde_json::Value::Object(source).to_string();
        let inner = match kind.as_ref().and_then(|k| k.as_str()) {
            Some("synthetic") => io::parse_json::<SyntheticSource>(path, &body).err(),
            Some("semisynthetic") => io::parse_json::<SemiSyntheticSource>(path, &body).err(),
            Some("csv") => io::parse_json::<CsvSource>(path, &body).err(),
            _ => None,
        };
        Err(match inner {
            Some(Error::Json { path, at, message }) => Error::Json {
                path,
                at: format!("source.{at}"),
                message,
            },
            _ => err,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains([',', '"', '\n']) {
            return Err(config_error("name", "must be non-empty and free of commas, quotes and newlines"));
        }
        if self.methods.is_empty() {
            return Err(config_error("methods", "must list at least one method"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(config_error(&format!("methods[{i}]"), format!("duplicate method `{m}`")));
            }
            if m.needs_ground_truth() && !self.source.has_ground_truth() {
                return Err(config_error(
                    &format!("methods[{i}]"),
                    "`oracle` needs a synthetic or semisynthetic source",
                ));
            }
        }
        if self.replications == 0 {
            return Err(config_error("replications", "must be positive"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(config_error("test_fraction", "must lie in (0, 1)"));
        }
        if self.folds < 2 {
            return Err(config_error("folds", "must be at least 2"));
        }
        self.grids.validate().map_err(|e| config_error("grids", e))?;
        if let Source::Synthetic(s) = &self.source {
            s.spec(self.seed).validate().map_err(|e| config_error("source", e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        let cfg = ExperimentConfig::parse(Path::new("c.json"), text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn minimal_synthetic_config() {
        let cfg = parse(
            r#"{"name":"t","source":{"type":"synthetic","n":100,"mechanism":{"kind":"censoring","p":0.5}},
                "methods":["joint_linear","mean_linear"]}"#,
        )
        .unwrap();
        assert_eq!((cfg.replications, cfg.folds, cfg.test_fraction), (10, 5, 0.3));
        assert_eq!(cfg.source.setting(), "censoring_p0.5");
        assert_eq!(cfg.grids, Grids::default());
    }

    #[test]
    fn errors_name_the_field() {
        let err = parse(r#"{"name":"t","source":{"type":"synthetic","n":100,"mechanism":{"kind":"mcar","p":0.5}},"methods":["nope"]}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("methods[0]") && err.contains("unknown method"), "{err}");
        let err = parse(r#"{"name":"t","source":{"type":"synthetic","n":"x","mechanism":{"kind":"mcar","p":0.5}},"methods":[]}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("source.n"), "{err}");
        let err = parse(r#"{"name":"t","source":{"type":"csv","path":"a.csv","target":"y"},"methods":["oracle"]}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("methods[0]"), "{err}");
        let err = parse(
            r#"{"name":"t","source":{"type":"synthetic","n":100,"mechanism":{"kind":"mcar","p":0.5}},"methods":["static"],"folds":1}"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("folds"), "{err}");
        let err = parse(r#"{"name":"t","source":{"type":"synthetic","n":100,"mechanism":{"kind":"mcar","p":0.5}},"methods":["static"],"fold":3}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("fold"), "{err}");
    }
}
