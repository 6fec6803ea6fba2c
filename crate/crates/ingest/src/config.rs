//! Service configuration: an optional TOML file, then environment overrides.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;

pub const ENV_LISTEN: &str = "TRACECARD_LISTEN";
pub const ENV_DATA_DIR: &str = "TRACECARD_DATA_DIR";
pub const ENV_PRICING: &str = "TRACECARD_PRICING";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    /// Pricing table file; the built-in table when absent.
    pub pricing: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 4318)),
            data_dir: PathBuf::from("tracecard-data"),
            pricing: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("{var}: {message}")]
    Env { var: &'static str, message: String },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    listen: Option<String>,
    data_dir: Option<PathBuf>,
    pricing: Option<PathBuf>,
}

impl ServiceConfig {
    /// Reads `file` when given, then applies `TRACECARD_*` variables from
    /// `env`. Relative paths in the file resolve against its directory.
    pub fn load(file: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut config = ServiceConfig::default();
        if let Some(path) = file {
            let file_err = |message: String| ConfigError::File {
                path: path.to_path_buf(),
                message,
            };
            let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
            let parsed: FileConfig = toml::from_str(&text).map_err(|e| file_err(e.to_string()))?;
            let base = path.parent().unwrap_or(Path::new(""));
            if let Some(listen) = parsed.listen {
                config.listen = listen.parse().map_err(|e| file_err(format!("listen: {e}")))?;
            }
            if let Some(dir) = parsed.data_dir {
                config.data_dir = base.join(dir);
            }
            config.pricing = parsed.pricing.map(|p| base.join(p));
        }
        if let Some(listen) = env(ENV_LISTEN) {
            config.listen = listen.parse().map_err(|e: std::net::AddrParseError| ConfigError::Env {
                var: ENV_LISTEN,
                message: e.to_string(),
            })?;
        }
        if let Some(dir) = env(ENV_DATA_DIR) {
            config.data_dir = PathBuf::from(dir);
        }
        if let Some(p) = env(ENV_PRICING) {
            config.pricing = Some(PathBuf::from(p));
        }
        Ok(config)
    }

    pub fn from_process_env(file: Option<&Path>) -> Result<Self, ConfigError> {
        Self::load(file, |k| std::env::var(k).ok())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracecard.toml");
        std::fs::write(&path, "listen = \"0.0.0.0:9000\"\ndata_dir = \"data\"\npricing = \"rates.toml\"\n").unwrap();
        let c = ServiceConfig::load(Some(&path), |_| None).unwrap();
        assert_eq!(c.listen.port(), 9000);
        assert_eq!(c.data_dir, dir.path().join("data"));
        assert_eq!(c.pricing, Some(dir.path().join("rates.toml")));
        let c = ServiceConfig::load(Some(&path), |k| (k == ENV_LISTEN).then(|| "127.0.0.1:1".into())).unwrap();
        assert_eq!(c.listen.port(), 1);
        assert!(ServiceConfig::load(None, |k| (k == ENV_LISTEN).then(|| "nope".into())).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "lisen = \"x\"\n").unwrap();
        assert!(ServiceConfig::load(Some(&path), |_| None).is_err());
    }
}
