//! Record/replay cache keyed on normalized requests.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use gauntlet_core::digest::sha256_hex;
use gauntlet_core::flow::Headers;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::error::{Error, Result};

pub const DEFAULT_VOLATILE: [&str; 4] = ["ts", "cb", "rnd", "nonce"];
pub const DEFAULT_STALENESS_LIMIT: u32 = 50;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RequestKey {
    pub method: String,
    pub host: String,
    pub path: String,
    pub canonical_query: String,
}

impl RequestKey {
    /// Query pairs are sorted and any whose name is in `volatile` dropped.
    /// The scheme and port are not part of the key.
    pub fn new(method: &str, url: &Url, volatile: &[String]) -> RequestKey {
        let mut pairs: Vec<(String, String)> = url
            .query_pairs()
            .filter(|(k, _)| !volatile.iter().any(|v| v == k.as_ref()))
            .map(|(k, v)| (k.into_owned(), v.into_owned()))
            .collect();
        pairs.sort();
        let canonical_query = url::form_urlencoded::Serializer::new(String::new())
            .extend_pairs(pairs)
            .finish();
        RequestKey {
            method: method.to_ascii_uppercase(),
            host: url
                .host_str()
                .unwrap_or_default()
                .trim_end_matches('.')
                .to_ascii_lowercase(),
            path: url.path().to_string(),
            canonical_query,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub status: u16,
    pub headers: Headers,
    #[serde(with = "b64")]
    pub body: Vec<u8>,
}

mod b64 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<u8>, D::Error> {
        B64.decode(String::deserialize(d)?)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    key: RequestKey,
    response: CachedResponse,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheFile {
    recorded_at: u64,
    sessions_served: u32,
    staleness_limit: u32,
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayCache {
    entries: BTreeMap<RequestKey, CachedResponse>,
    pub recorded_at: u64,
    pub sessions_served: u32,
    pub staleness_limit: u32,
}

impl Default for ReplayCache {
    fn default() -> Self {
        ReplayCache::new(DEFAULT_STALENESS_LIMIT)
    }
}

impl ReplayCache {
    pub fn new(staleness_limit: u32) -> Self {
        ReplayCache {
            entries: BTreeMap::new(),
            recorded_at: 0,
            sessions_served: 0,
            staleness_limit,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &RequestKey) -> Option<&CachedResponse> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &RequestKey> {
        self.entries.keys()
    }

    /// Stores the response unless the key is already present; the first
    /// recording wins so that a page loaded twice during a rebuild stays stable.
    pub fn record(&mut self, key: RequestKey, response: CachedResponse) -> bool {
        if self.entries.contains_key(&key) {
            return false;
        }
        self.entries.insert(key, response);
        true
    }

    pub fn is_stale(&self) -> bool {
        self.sessions_served >= self.staleness_limit
    }

    pub fn note_session_served(&mut self) {
        self.sessions_served = self.sessions_served.saturating_add(1);
    }

    /// Content identifier of the cache: the same recorded bytes always give
    /// the same epoch.
    pub fn epoch(&self) -> String {
        let mut h = String::new();
        for (k, v) in &self.entries {
            h.push_str(&format!("{k:?}{}{}\n", v.status, sha256_hex(&v.body)));
        }
        sha256_hex(h.as_bytes())[..16].to_string()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CacheFile {
            recorded_at: self.recorded_at,
            sessions_served: self.sessions_served,
            staleness_limit: self.staleness_limit,
            entries: self
                .entries
                .iter()
                .map(|(k, v)| Entry {
                    key: k.clone(),
                    response: v.clone(),
                })
                .collect(),
        };
        let bytes = serde_json::to_vec(&file)
            .map_err(|e| Error::Config(format!("cache serialization: {e}")))?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::file(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        let file: CacheFile = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("cache file {}: {e}", path.display())))?;
        Ok(ReplayCache {
            entries: file
                .entries
                .into_iter()
                .map(|e| (e.key, e.response))
                .collect(),
            recorded_at: file.recorded_at,
            sessions_served: file.sessions_served,
            staleness_limit: file.staleness_limit,
        })
    }
}
