//! Service configuration, loaded from a single JSON file.
//!
//! Relative paths are resolved against the directory holding the file.
//! Database credentials for an external server may be overridden with
//! `TWINVAULT_DB_USER` and `TWINVAULT_DB_PASSWORD`.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use twinvault_core::backend::{BackendConfig, LatencySettings};
use twinvault_core::relational::{self, Connector, RelationalConfig};

pub const ENV_DB_USER: &str = "TWINVAULT_DB_USER";
pub const ENV_DB_PASSWORD: &str = "TWINVAULT_DB_PASSWORD";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub cas_root: PathBuf,
    pub ledger_log: PathBuf,
    pub relational: RelationalConfig,
    #[serde(default = "default_cap")]
    pub payload_cap_bytes: u64,
    #[serde(default)]
    pub latency: LatencySettings,
    pub report_dir: PathBuf,
    /// Directory with the web UI bundle, served at `/` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui_dir: Option<PathBuf>,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_cap() -> u64 {
    relational::DEFAULT_PAYLOAD_CAP
}

impl ServiceConfig {
    /// Default layout under one data directory.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let backend = BackendConfig::in_dir(dir);
        Self {
            listen: default_listen(),
            cas_root: backend.cas_root,
            ledger_log: backend.ledger_log,
            relational: backend.relational,
            payload_cap_bytes: backend.payload_cap_bytes,
            latency: backend.latency,
            report_dir: dir.join("reports"),
            ui_dir: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: ServiceConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        config.apply_env_overrides(|key| std::env::var(key).ok());
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.cas_root);
        resolve(&mut self.ledger_log);
        resolve(&mut self.report_dir);
        if let Some(ui) = &mut self.ui_dir {
            resolve(ui);
        }
        if let Connector::Embedded { path } = &mut self.relational.connector {
            resolve(path);
        }
    }

    pub fn apply_env_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Connector::Server { user, password, .. } = &mut self.relational.connector {
            if let Some(u) = lookup(ENV_DB_USER) {
                *user = u;
            }
            if let Some(p) = lookup(ENV_DB_PASSWORD) {
                *password = p;
            }
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.payload_cap_bytes == 0 {
            bail!("payload_cap_bytes must be positive");
        }
        if let Some(ui) = &self.ui_dir {
            if !ui.is_dir() {
                bail!("ui_dir {} is not a directory", ui.display());
            }
        }
        Ok(())
    }

    pub fn backend_config(&self) -> BackendConfig {
        BackendConfig {
            cas_root: self.cas_root.clone(),
            ledger_log: self.ledger_log.clone(),
            relational: self.relational.clone(),
            payload_cap_bytes: self.payload_cap_bytes,
            latency: self.latency.clone(),
        }
    }
}
