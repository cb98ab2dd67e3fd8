//! Application config file. Relative paths resolve against the directory of
//! the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::GatewayConfig;
use crate::pipeline::PipelineVariant;
use crate::scoring::SelectionConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid setting: {0}")]
    Invalid(String),
    #[error("{role} file not found: {path}")]
    MissingInput { role: &'static str, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { corpus: None, snapshot: None, out_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Score perplexity through the gateway's logprob endpoint.
    pub ppl: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub gateway: GatewayConfig,
    pub selection: SelectionConfig,
    pub paths: Paths,
    pub variant: PipelineVariant,
    pub evaluate: EvaluateConfig,
}

fn anchor(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg: AppConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse { path: path.into(), reason: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = cfg.paths.corpus.as_mut() {
            anchor(base, p);
        }
        if let Some(p) = cfg.paths.snapshot.as_mut() {
            anchor(base, p);
        }
        anchor(base, &mut cfg.paths.out_dir);
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(AppConfig::default()), AppConfig::load)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.gateway.validate().map_err(ConfigError::Invalid)?;
        self.selection.validate().map_err(ConfigError::Invalid)
    }

    pub fn corpus(&self) -> Result<&Path, ConfigError> {
        let p = self.paths.corpus.as_deref().ok_or_else(|| ConfigError::Invalid("no corpus path given".into()))?;
        existing("corpus", p)
    }

    pub fn snapshot(&self) -> Result<&Path, ConfigError> {
        let p = self.paths.snapshot.as_deref().ok_or_else(|| ConfigError::Invalid("no snapshot path given".into()))?;
        existing("snapshot", p)
    }

    pub fn out_file(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }
}

/// Checks that an input file exists before any work starts.
pub fn existing<'p>(role: &'static str, p: &'p Path) -> Result<&'p Path, ConfigError> {
    if p.is_file() {
        Ok(p)
    } else {
        Err(ConfigError::MissingInput { role, path: p.into() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"paths": {"corpus": "c.jsonl", "out_dir": "/abs/out"}, "variant": "nr"}"#).unwrap();
        let cfg = AppConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.corpus.as_deref(), Some(dir.path().join("c.jsonl").as_path()));
        assert_eq!(cfg.paths.out_dir, PathBuf::from("/abs/out"));
        assert_eq!(cfg.variant, PipelineVariant::Nr);
        assert_eq!(cfg.selection.n, 5);
        assert!(matches!(cfg.corpus(), Err(ConfigError::MissingInput { role: "corpus", .. })));
    }

    #[test]
    fn unknown_fields_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"pathz": {}}"#).unwrap();
        assert!(matches!(AppConfig::load(&path), Err(ConfigError::Parse { .. })));
        let missing = dir.path().join("nope.json");
        let e = AppConfig::load(&missing).unwrap_err().to_string();
        assert!(e.contains("nope.json"), "{e}");
    }
}
