//! Service configuration: a TOML file plus `CHITCHAT_*` environment
//! overrides.
//!
//! ```toml
//! port = 8080
//! store = "data/store"
//! domain_model = "models/domain.json"
//! generic_model = "models/generic.json"
//! rules = "config/rules.toml"        # optional
//! cors_origins = ["http://localhost:5173"]
//!
//! [moderation]                       # optional
//! endpoint = "https://moderation.example/v1/score"
//! credential_env = "MODERATION_TOKEN"
//! timeout_ms = 200
//! ```

use std::path::{Path, PathBuf};

use chitchat_core::moderation::ModerationConfig;
use chitchat_core::pipeline::EngineConfig;
use chitchat_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MAX_BODY_BYTES: usize = 8 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_port")]
    pub port: u16,
    pub store: PathBuf,
    #[serde(default)]
    pub store_version: Option<u64>,
    pub domain_model: PathBuf,
    pub generic_model: PathBuf,
    #[serde(default)]
    pub rules: Option<PathBuf>,
    #[serde(default)]
    pub moderation: ModerationConfig,
    #[serde(default)]
    pub cors_origins: Vec<String>,
    #[serde(default = "default_max_body")]
    pub max_body_bytes: usize,
    /// Load the new snapshot after a successful annotation apply.
    #[serde(default = "default_true")]
    pub reload_after_apply: bool,
}

fn default_bind() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8080
}

fn default_max_body() -> usize {
    MAX_BODY_BYTES
}

fn default_true() -> bool {
    true
}

impl ServiceConfig {
    pub fn new(store: PathBuf, domain_model: PathBuf, generic_model: PathBuf) -> Self {
        Self {
            bind: default_bind(),
            port: default_port(),
            store,
            store_version: None,
            domain_model,
            generic_model,
            rules: None,
            moderation: ModerationConfig::default(),
            cors_origins: Vec::new(),
            max_body_bytes: MAX_BODY_BYTES,
            reload_after_apply: true,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            context: "service config".into(),
            message: e.to_string(),
        })
    }

    /// Reads `path`, applies environment overrides and resolves relative
    /// paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        let mut c = Self::from_toml_str(&text)?;
        c.apply_env(|k| std::env::var(k).ok())?;
        if let Some(base) = path.parent() {
            c.resolve_relative(base);
        }
        Ok(c)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        let bad = |k: &str, v: &str| Error::InvalidInput(format!("{k}={v} is not valid"));
        if let Some(v) = get("CHITCHAT_BIND") {
            self.bind = v;
        }
        if let Some(v) = get("CHITCHAT_PORT") {
            self.port = v.parse().map_err(|_| bad("CHITCHAT_PORT", &v))?;
        }
        if let Some(v) = get("CHITCHAT_STORE") {
            self.store = v.into();
        }
        if let Some(v) = get("CHITCHAT_DOMAIN_MODEL") {
            self.domain_model = v.into();
        }
        if let Some(v) = get("CHITCHAT_GENERIC_MODEL") {
            self.generic_model = v.into();
        }
        if let Some(v) = get("CHITCHAT_RULES") {
            self.rules = Some(v.into());
        }
        if let Some(v) = get("CHITCHAT_MODERATION_ENDPOINT") {
            self.moderation.endpoint = Some(v);
        }
        if let Some(v) = get("CHITCHAT_MODERATION_CREDENTIAL_ENV") {
            self.moderation.credential_env = Some(v);
        }
        if let Some(v) = get("CHITCHAT_CORS_ORIGINS") {
            self.cors_origins = v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .collect();
        }
        Ok(())
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store);
        fix(&mut self.domain_model);
        fix(&mut self.generic_model);
        if let Some(r) = &mut self.rules {
            fix(r);
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            store: self.store.clone(),
            store_version: self.store_version,
            domain_model: self.domain_model.clone(),
            generic_model: self.generic_model.clone(),
            rules: self.rules.clone(),
            moderation: self.moderation.clone(),
        }
    }
}
