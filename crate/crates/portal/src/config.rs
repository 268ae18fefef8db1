use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use sciflow_core::bridge::BackendDescriptor;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// How toolkit tools are executed.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ToolkitMode {
    /// Inside the server process.
    #[default]
    InProcess,
    /// As `<binary> <tool> args...` subprocesses.
    Process { binary: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
pub struct AdminSeed {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortalConfig {
    pub addr: SocketAddr,
    pub store_dir: PathBuf,
    /// fsync every log append and stored blob.
    pub fsync: bool,
    pub token_ttl_s: u64,
    /// Wall-clock pause between engine passes.
    pub tick_interval_ms: u64,
    /// Simulated milliseconds each engine pass advances the backends.
    pub step_ms: u64,
    pub password_iterations: u32,
    /// Directory with the built web UI, served under `/ui/`.
    pub ui_dir: Option<PathBuf>,
    pub toolkit: ToolkitMode,
    /// Created at startup when no account exists yet.
    pub admin: Option<AdminSeed>,
    /// Store the demo workflow and template when the repository is empty.
    pub seed_demo: bool,
    pub backends: Vec<BackendDescriptor>,
}

impl Default for PortalConfig {
    fn default() -> Self {
        PortalConfig {
            addr: "127.0.0.1:8080".parse().unwrap(),
            store_dir: PathBuf::from("sciflow-store"),
            fsync: true,
            token_ttl_s: 3600,
            tick_interval_ms: 200,
            step_ms: 100,
            password_iterations: 100_000,
            ui_dir: None,
            toolkit: ToolkitMode::InProcess,
            admin: None,
            seed_demo: false,
            backends: Vec::new(),
        }
    }
}

impl PortalConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Reads the optional config file, then applies `SCIFLOW_*` overrides
    /// looked up through `env`.
    pub fn load(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                PortalConfig::from_toml(&text)?
            }
            None => PortalConfig::default(),
        };
        if let Some(v) = env("SCIFLOW_ADDR") {
            config.addr = v
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("SCIFLOW_ADDR {v:?} is not host:port")))?;
        }
        if let Some(v) = env("SCIFLOW_STORE_DIR") {
            config.store_dir = PathBuf::from(v);
        }
        if let Some(v) = env("SCIFLOW_TOKEN_TTL_S") {
            config.token_ttl_s = v
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("SCIFLOW_TOKEN_TTL_S {v:?} is not a number")))?;
        }
        if let Some(password) = env("SCIFLOW_ADMIN_PASSWORD") {
            let username = config.admin.take().map_or_else(|| "admin".to_string(), |a| a.username);
            config.admin = Some(AdminSeed { username, password });
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.token_ttl_s == 0 {
            return Err(ConfigError::Invalid("token_ttl_s must be positive".into()));
        }
        if self.password_iterations == 0 {
            return Err(ConfigError::Invalid("password_iterations must be positive".into()));
        }
        for b in &self.backends {
            b.validate().map_err(|e| ConfigError::Invalid(format!("backend {}: {e}", b.id)))?;
        }
        Ok(())
    }

    pub fn work_dir(&self) -> PathBuf {
        self.store_dir.join("work")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn env_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("portal.toml");
        std::fs::write(
            &path,
            r#"
addr = "127.0.0.1:9000"
token_ttl_s = 60
toolkit = { mode = "process", binary = "/opt/sciflow-tk" }

[admin]
username = "root"
password = "pw"

[[backends]]
id = "c1"
kind = "cluster_sim"
slots = 2
"#,
        )
        .unwrap();
        let env: HashMap<&str, &str> = [("SCIFLOW_TOKEN_TTL_S", "5"), ("SCIFLOW_STORE_DIR", "/tmp/s")].into();
        let c = PortalConfig::load(Some(&path), |k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.addr.port(), 9000);
        assert_eq!(c.token_ttl_s, 5);
        assert_eq!(c.store_dir, PathBuf::from("/tmp/s"));
        assert_eq!(c.backends.len(), 1);
        assert_eq!(c.admin.unwrap().username, "root");
        assert!(matches!(c.toolkit, ToolkitMode::Process { .. }));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PortalConfig::load(None, |k| (k == "SCIFLOW_ADDR").then(|| "nope".into())).is_err());
        assert!(PortalConfig::from_toml("colour = 1").is_err());
        let bad = PortalConfig {
            backends: vec![BackendDescriptor::cluster("c1", 0, 1)],
            ..PortalConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn full_file() {
        let c = PortalConfig::from_toml(
            r#"
addr = "127.0.0.1:8080"
store_dir = "sciflow-store"
fsync = false
seed_demo = true

[toolkit]
mode = "process"
binary = "/opt/sciflow-tk"

[admin]
username = "admin"
password = "change-me"

[[backends]]
id = "local"
kind = "local"
slots = 2
tags = ["light"]
"#,
        )
        .unwrap();
        assert!(!c.fsync && c.seed_demo);
        assert_eq!(c.toolkit, ToolkitMode::Process { binary: "/opt/sciflow-tk".into() });
        assert_eq!(c.backends, vec![BackendDescriptor::local("local", 2).with_tags(["light"])]);
        c.validate().unwrap();
    }
}
