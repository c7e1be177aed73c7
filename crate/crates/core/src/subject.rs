//! Subject identity and the behavior spec of simulated subjects.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::filter::ResourceType;
use crate::leak::{Encoding, Location, PROBED_APIS};
use crate::profile::PiiType;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectOrigin {
    Play,
    ChineseStore,
    Preinstalled,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subject {
    pub subject_id: String,
    pub package_name: String,
    pub cert_digest: String,
    pub origin: SubjectOrigin,
    pub display_name: String,
    #[serde(default)]
    pub declared_developer_domain: Option<String>,
}

impl Subject {
    pub fn new(
        package_name: &str,
        cert_digest: &str,
        origin: SubjectOrigin,
        display_name: &str,
        developer_domain: Option<&str>,
    ) -> Result<Self> {
        let digest = cert_digest.to_ascii_lowercase();
        if digest.len() != 64 || !digest.bytes().all(|c| c.is_ascii_hexdigit()) {
            return Err(Error::invalid(
                "subject",
                "certificate digest must be 64 hex characters",
            ));
        }
        if package_name.is_empty() || package_name.contains(':') {
            return Err(Error::invalid(
                "subject",
                format!("bad package name {package_name:?}"),
            ));
        }
        Ok(Subject {
            subject_id: format!("{package_name}:{digest}"),
            package_name: package_name.to_string(),
            cert_digest: digest,
            origin,
            display_name: display_name.to_string(),
            declared_developer_domain: developer_domain.map(str::to_string),
        })
    }

    /// A simulated subject: the certificate digest is derived from the package name.
    pub fn simulated(package_name: &str, display_name: &str) -> Result<Self> {
        let digest = sha256_hex(format!("simulated:{package_name}").as_bytes());
        Subject::new(
            package_name,
            &digest,
            SubjectOrigin::Simulated,
            display_name,
            None,
        )
    }
}

/// Fails when two subjects share an id.
pub fn ensure_unique(subjects: &[Subject]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for s in subjects {
        if !seen.insert(s.subject_id.as_str()) {
            return Err(Error::invalid(
                "subject list",
                format!("duplicate subject {}", s.subject_id),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Http,
    Https,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Http => "http",
            Scheme::Https => "https",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixedContentPolicy {
    Allow,
    Upgrade,
    #[default]
    Block,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakSpec {
    pub pii_type: PiiType,
    pub encoding: Encoding,
    /// Absolute URL the value is sent to.
    pub destination: String,
    #[serde(default = "default_location")]
    pub location: Location,
}

fn default_location() -> Location {
    Location::Url
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySpec {
    pub destination: String,
    pub fraction: f64,
}

/// Deterministic behavior of a simulated subject.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubjectBehaviorSpec {
    pub blocks_filterlisted: bool,
    /// Resource types never blocked even when listed (e.g. `image`).
    pub exempt_from_blocking: Vec<String>,
    pub leaks: Vec<LeakSpec>,
    pub sends_history_to: Option<HistorySpec>,
    pub accepts_bad_cert: bool,
    pub default_scheme: Scheme,
    pub injects_script: Option<String>,
    pub sends_xrw_header: bool,
    pub webapi_grants: BTreeSet<String>,
    pub webapi_prompts: BTreeSet<String>,
    pub mixed_content: MixedContentPolicy,
    pub launch_delay_ms: u64,
    pub needs_interaction: bool,
}

fn absolute_http(url: &str) -> bool {
    url::Url::parse(url)
        .map(|u| matches!(u.scheme(), "http" | "https") && u.host_str().is_some())
        .unwrap_or(false)
}

impl SubjectBehaviorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::invalid("behavior spec", d));
        for t in &self.exempt_from_blocking {
            if ResourceType::from_option(t).is_none() {
                return bad(format!("unknown resource type {t:?}"));
            }
        }
        for l in &self.leaks {
            if !absolute_http(&l.destination) {
                return bad(format!(
                    "leak destination {:?} is not an http(s) URL",
                    l.destination
                ));
            }
        }
        if let Some(h) = &self.sends_history_to {
            if !absolute_http(&h.destination) {
                return bad(format!(
                    "history destination {:?} is not an http(s) URL",
                    h.destination
                ));
            }
            if !(h.fraction > 0.0 && h.fraction <= 1.0) {
                return bad(format!("history fraction {} outside (0, 1]", h.fraction));
            }
        }
        if let Some(s) = &self.injects_script {
            if !absolute_http(s) {
                return bad(format!("injected script {s:?} is not an http(s) URL"));
            }
        }
        for api in self.webapi_grants.iter().chain(&self.webapi_prompts) {
            if !PROBED_APIS.contains(&api.as_str()) {
                return bad(format!("unknown web API {api:?}"));
            }
        }
        Ok(())
    }

    pub fn exempt_types(&self) -> Vec<ResourceType> {
        self.exempt_from_blocking
            .iter()
            .filter_map(|t| ResourceType::from_option(t))
            .collect()
    }
}
