//! Testbed configuration. Read from TOML; paths and ports can be
//! overridden from the environment (`GAUNTLET_DATA_DIR`, `GAUNTLET_CACHE`,
//! `GAUNTLET_CA_DIR`, `GAUNTLET_SUITE_DIR`, `GAUNTLET_TRIPWIRE_JS`,
//! `GAUNTLET_PROXY_PORT`, `GAUNTLET_UDP_PORT`, `GAUNTLET_SITE_PORT`).

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use gauntlet_core::subject::SubjectBehaviorSpec;
use serde::{Deserialize, Serialize};

use crate::ca::CaPaths;
use crate::error::{Error, Result};
use crate::gateway::cache::{DEFAULT_STALENESS_LIMIT, DEFAULT_VOLATILE};
use crate::site_server::SuiteConfig;
use crate::subjects::CommandHooks;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Archives, cache and campaign outputs live here.
    pub data_dir: PathBuf,
    pub cache: Option<PathBuf>,
    pub ca_dir: Option<PathBuf>,
    pub suite_dir: Option<PathBuf>,
    /// Built tripwire script served by the collector.
    pub tripwire_js: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: PathBuf::from("gauntlet-data"),
            cache: None,
            ca_dir: None,
            suite_dir: None,
            tripwire_js: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ports {
    pub bind: IpAddr,
    /// 0 picks a free port.
    pub proxy: u16,
    pub udp: Option<u16>,
    pub site: u16,
}

impl Default for Ports {
    fn default() -> Self {
        Ports {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            proxy: 8080,
            udp: None,
            site: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewaySettings {
    pub volatile_params: Vec<String>,
    pub staleness_limit: u32,
    pub inject_tripwire: bool,
    pub dns_answer: Ipv4Addr,
    pub dns_upstream: Option<SocketAddr>,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        GatewaySettings {
            volatile_params: DEFAULT_VOLATILE.iter().map(|s| s.to_string()).collect(),
            staleness_limit: DEFAULT_STALENESS_LIMIT,
            inject_tripwire: true,
            dns_answer: Ipv4Addr::LOCALHOST,
            dns_upstream: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timing {
    pub launch_timeout_ms: u64,
    pub request_timeout_ms: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            launch_timeout_ms: 30_000,
            request_timeout_ms: 15_000,
        }
    }
}

impl Timing {
    pub fn launch_timeout(&self) -> Duration {
        Duration::from_millis(self.launch_timeout_ms)
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSettings {
    pub history_threshold: f64,
    /// Extra filter lists in ABP syntax, used instead of the bundled ones.
    pub filter_lists: Vec<PathBuf>,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            history_threshold: 0.5,
            filter_lists: Vec::new(),
        }
    }
}

/// One subject. Exactly one of `canned`, `spec` and `hooks` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectConfig {
    pub package: Option<String>,
    pub name: Option<String>,
    /// SHA-256 of the signing certificate of a real subject.
    #[serde(default)]
    pub cert_digest: Option<String>,
    #[serde(default)]
    pub canned: Option<String>,
    #[serde(default)]
    pub spec: Option<SubjectBehaviorSpec>,
    #[serde(default)]
    pub hooks: Option<CommandHooks>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub paths: Paths,
    pub ports: Ports,
    pub gateway: GatewaySettings,
    pub suite: SuiteConfig,
    pub timing: Timing,
    pub analysis: AnalysisSettings,
    pub subjects: Vec<SubjectConfig>,
}

fn env_path(var: &str) -> Option<PathBuf> {
    std::env::var_os(var)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

fn env_port(var: &str) -> Result<Option<u16>> {
    match std::env::var(var) {
        Ok(v) if !v.is_empty() => v
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{var}={v:?} is not a port"))),
        _ => Ok(None),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads `path` (or defaults when `None`) and applies the environment.
    pub fn load(path: Option<&Path>) -> Result<Config> {
        let mut c = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
                Config::parse(&text)?
            }
            None => Config::default(),
        };
        c.apply_env()?;
        Ok(c)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Some(p) = env_path("GAUNTLET_DATA_DIR") {
            self.paths.data_dir = p;
        }
        if let Some(p) = env_path("GAUNTLET_CACHE") {
            self.paths.cache = Some(p);
        }
        if let Some(p) = env_path("GAUNTLET_CA_DIR") {
            self.paths.ca_dir = Some(p);
        }
        if let Some(p) = env_path("GAUNTLET_SUITE_DIR") {
            self.paths.suite_dir = Some(p);
        }
        if let Some(p) = env_path("GAUNTLET_TRIPWIRE_JS") {
            self.paths.tripwire_js = Some(p);
        }
        if let Some(p) = env_port("GAUNTLET_PROXY_PORT")? {
            self.ports.proxy = p;
        }
        if let Some(p) = env_port("GAUNTLET_UDP_PORT")? {
            self.ports.udp = Some(p);
        }
        if let Some(p) = env_port("GAUNTLET_SITE_PORT")? {
            self.ports.site = p;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.subjects.iter().enumerate() {
            let set = [s.canned.is_some(), s.spec.is_some(), s.hooks.is_some()]
                .iter()
                .filter(|b| **b)
                .count();
            if set != 1 {
                return Err(Error::Config(format!(
                    "subject {i}: exactly one of canned, spec or hooks is required"
                )));
            }
            if s.canned.is_none() && s.package.is_none() {
                return Err(Error::Config(format!("subject {i}: package is required")));
            }
            if let Some(spec) = &s.spec {
                spec.validate()?;
            }
        }
        if !(self.analysis.history_threshold > 0.0 && self.analysis.history_threshold <= 1.0) {
            return Err(Error::Config("history_threshold must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn cache_path(&self) -> PathBuf {
        self.paths
            .cache
            .clone()
            .unwrap_or_else(|| self.paths.data_dir.join("cache.json"))
    }

    pub fn ca_paths(&self) -> (CaPaths, CaPaths) {
        let dir = self
            .paths
            .ca_dir
            .clone()
            .unwrap_or_else(|| self.paths.data_dir.join("ca"));
        let pair = |name: &str| CaPaths {
            cert: dir.join(format!("{name}.pem")),
            key: dir.join(format!("{name}.key")),
        };
        (pair("trusted"), pair("untrusted"))
    }

    pub fn baseline_dir(&self) -> PathBuf {
        self.paths.data_dir.join("baseline")
    }

    pub fn subjects_dir(&self) -> PathBuf {
        self.paths.data_dir.join("subjects")
    }

    pub fn suite_config(&self) -> SuiteConfig {
        let mut s = self.suite.clone();
        if let Some(d) = &self.paths.suite_dir {
            s.dir = d.clone();
        }
        s
    }
}
