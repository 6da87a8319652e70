use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use benchroute::{Execution, RouterConfig};
use serde::{Deserialize, Serialize};

pub const ENV_BIND: &str = "BENCHROUTE_BIND";
pub const ENV_STORE: &str = "BENCHROUTE_STORE";
pub const ENV_PAIRS: &str = "BENCHROUTE_PAIRS";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorePaths {
    /// Directory written by `benchroute ingest` or `benchroute synth`.
    pub dir: Option<PathBuf>,
    /// Precomputed distance/accuracy pairs; replayed at startup when absent.
    pub pairs: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub store: StorePaths,
    pub router: RouterConfig,
    pub server: ServerConfig,
    pub execution: Execution,
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Load the optional config file, then apply environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get(ENV_BIND) {
            self.server.bind = v;
        }
        if let Some(v) = get(ENV_STORE) {
            self.store.dir = Some(v.into());
        }
        if let Some(v) = get(ENV_PAIRS) {
            self.store.pairs = Some(v.into());
        }
    }

    pub fn validate(&self) -> Result<SocketAddr> {
        let Some(dir) = &self.store.dir else {
            bail!("no store directory configured (store.dir or {ENV_STORE})");
        };
        if !dir.is_dir() {
            bail!("store directory {} does not exist", dir.display());
        }
        if let Some(p) = &self.store.pairs {
            if !p.is_file() {
                bail!("pairs file {} does not exist", p.display());
            }
        }
        self.server
            .bind
            .parse()
            .with_context(|| format!("invalid bind address {:?}", self.server.bind))
    }
}
