use std::path::Path;

use crate::{Error, Result};

static BUNDLED_ORGS: &str = include_str!("../../data/orgs.tsv");

/// Host-suffix to organization table. Tab or whitespace separated,
/// `#` comments.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OrgMap {
    entries: Vec<(String, String)>,
}

impl OrgMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (suffix, org) = line.split_once(char::is_whitespace).ok_or_else(|| {
                Error::invalid("org map", format!("line {}: missing organization", n + 1))
            })?;
            entries.push((suffix.trim().to_ascii_lowercase(), org.trim().to_string()));
        }
        Ok(OrgMap { entries })
    }

    pub fn bundled() -> Self {
        OrgMap::parse(BUNDLED_ORGS).expect("bundled org map parses")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        OrgMap::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn insert(&mut self, suffix: &str, org: &str) {
        self.entries
            .push((suffix.to_ascii_lowercase(), org.to_string()));
    }

    /// Organization of the longest matching suffix, on label boundaries.
    pub fn lookup(&self, host: &str) -> Option<&str> {
        let host = host.trim_end_matches('.').to_ascii_lowercase();
        self.entries
            .iter()
            .filter(|(s, _)| host == *s || host.ends_with(&format!(".{s}")))
            .max_by_key(|(s, _)| s.len())
            .map(|(_, o)| o.as_str())
    }
}
