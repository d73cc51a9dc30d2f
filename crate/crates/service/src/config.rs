//! Service configuration, read from TOML with a few environment overrides.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! data_dir = "data"
//! alpha = 0.05
//! admin_token = "change-me"
//! seed_policy = "fixed_base"     # or "per_session_random" (default)
//! seed_base = 20240501
//! # catalog = "my-catalog.toml"  # bundled catalog when absent
//! # templates = "my-templates.toml"
//!
//! [assignment]
//! strategy = "random_balanced"   # "alternating" | "random_balanced" | "fixed"
//! seed = 7
//! # condition = "control"        # required with "fixed"
//! ```
//!
//! `BIASPROBE_PORT` replaces the port of `listen`; `BIASPROBE_DATA_DIR`
//! replaces `data_dir`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use biasprobe::catalog::Catalog;
use biasprobe::store::{AssignmentPolicy, AssignmentStrategy};
use biasprobe::tasks::{Condition, Study, Templates};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// A fresh random seed for every session.
    #[default]
    PerSessionRandom,
    /// Seeds derived from `seed_base` and the participant id.
    FixedBase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Alternating,
    #[default]
    RandomBalanced,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentConfig {
    #[serde(default)]
    pub strategy: StrategyName,
    #[serde(default)]
    pub seed: u64,
    pub condition: Option<Condition>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub catalog: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub admin_token: String,
    #[serde(default)]
    pub seed_policy: SeedPolicy,
    pub seed_base: Option<u64>,
    #[serde(default)]
    pub assignment: AssignmentConfig,
}

fn default_listen() -> SocketAddr {
    "127.0.0.1:8080".parse().expect("valid address")
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_alpha() -> f64 {
    0.05
}

impl ServiceConfig {
    pub fn parse(source: &str) -> Result<Self> {
        let config: ServiceConfig = toml::from_str(source).context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path`, applies environment overrides and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config = Self::parse(&source)?;
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(port) = var("BIASPROBE_PORT") {
            let port: u16 = port
                .parse()
                .with_context(|| format!("BIASPROBE_PORT '{port}' is not a port"))?;
            self.listen.set_port(port);
        }
        if let Some(dir) = var("BIASPROBE_DATA_DIR") {
            self.data_dir = PathBuf::from(dir);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            bail!("alpha must lie in (0, 0.5], got {}", self.alpha);
        }
        if self.admin_token.trim().is_empty() {
            bail!("admin_token must not be empty");
        }
        if self.seed_policy == SeedPolicy::FixedBase && self.seed_base.is_none() {
            bail!("seed_policy fixed_base needs seed_base");
        }
        self.assignment_policy()?;
        Ok(())
    }

    pub fn assignment_policy(&self) -> Result<AssignmentPolicy> {
        let a = &self.assignment;
        let strategy = match (a.strategy, a.condition) {
            (StrategyName::Fixed, Some(c)) => AssignmentStrategy::Fixed(c),
            (StrategyName::Fixed, None) => bail!("assignment strategy fixed needs a condition"),
            (_, Some(_)) => bail!("assignment condition is only used with strategy fixed"),
            (StrategyName::Alternating, None) => AssignmentStrategy::Alternating,
            (StrategyName::RandomBalanced, None) => AssignmentStrategy::RandomBalanced,
        };
        Ok(AssignmentPolicy { strategy, seed: a.seed })
    }

    pub fn store_path(&self) -> PathBuf {
        self.data_dir.join("sessions.jsonl")
    }

    /// The configured catalog and templates, falling back to the bundled ones.
    pub fn study(&self) -> Result<Study> {
        let catalog = match &self.catalog {
            Some(p) => Catalog::load(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("loading catalog {}", p.display()))?,
            None => Catalog::bundled(),
        };
        let templates = match &self.templates {
            Some(p) => {
                Templates::load(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                    .with_context(|| format!("loading templates {}", p.display()))?
            }
            None => Templates::bundled(),
        };
        Ok(Study::new(catalog, templates)?)
    }
}
