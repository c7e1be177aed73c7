//! Captured flows and the `flows.jsonl` session log format.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use url::Url;

use crate::{Error, Result};

/// Ordered, case-preserving header multimap. Lookups are case-insensitive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Headers(Vec<(String, String)>);

impl Headers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.0
            .iter()
            .filter(move |(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn append(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.0.push((name.into(), value.into()));
    }

    /// Replaces every value of `name` with a single entry, keeping the position
    /// of the first occurrence.
    pub fn set(&mut self, name: &str, value: impl Into<String>) {
        let value = value.into();
        match self
            .0
            .iter()
            .position(|(k, _)| k.eq_ignore_ascii_case(name))
        {
            Some(pos) => {
                self.0[pos].1 = value;
                let mut i = pos + 1;
                while i < self.0.len() {
                    if self.0[i].0.eq_ignore_ascii_case(name) {
                        self.0.remove(i);
                    } else {
                        i += 1;
                    }
                }
            }
            None => self.0.push((name.to_string(), value)),
        }
    }

    pub fn remove(&mut self, name: &str) {
        self.0.retain(|(k, _)| !k.eq_ignore_ascii_case(name));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Media type without parameters, lowercased.
    pub fn content_type(&self) -> Option<String> {
        self.get("content-type").map(|ct| {
            ct.split(';')
                .next()
                .unwrap_or("")
                .trim()
                .to_ascii_lowercase()
        })
    }

    pub fn charset(&self) -> Option<String> {
        let ct = self.get("content-type")?;
        ct.split(';').skip(1).find_map(|param| {
            let (k, v) = param.split_once('=')?;
            k.trim()
                .eq_ignore_ascii_case("charset")
                .then(|| v.trim().trim_matches('"').to_ascii_lowercase())
        })
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for Headers {
    fn from_iter<T: IntoIterator<Item = (K, V)>>(iter: T) -> Self {
        Headers(
            iter.into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transport {
    #[serde(rename = "tcp")]
    Tcp,
    #[serde(rename = "udp-dns")]
    UdpDns,
    #[serde(rename = "dropped-udp")]
    DroppedUdp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertMode {
    TrustedCa,
    UntrustedCa,
}

impl fmt::Display for CertMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CertMode::TrustedCa => "trusted_ca",
            CertMode::UntrustedCa => "untrusted_ca",
        })
    }
}

/// IANA TLS cipher suite code point. Serialized as `"0x0005"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CipherSuiteId(pub u16);

impl fmt::Display for CipherSuiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:04X}", self.0)
    }
}

impl Serialize for CipherSuiteId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CipherSuiteId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let digits = s
            .strip_prefix("0x")
            .or_else(|| s.strip_prefix("0X"))
            .unwrap_or(&s);
        u16::from_str_radix(digits, 16)
            .map(CipherSuiteId)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsInfo {
    /// Negotiated protocol version when the handshake completed, otherwise the
    /// highest version offered by the client hello.
    pub version: String,
    pub ciphersuites_offered: Vec<CipherSuiteId>,
    pub cipher_negotiated: Option<CipherSuiteId>,
    pub cert_mode: CertMode,
    pub handshake_completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sni: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheOutcome {
    /// Fetched upstream in record mode and stored.
    Recorded,
    Hit,
    /// Replay-mode miss that fell through to upstream.
    Miss,
    /// Not eligible for caching (collector traffic, tunnels, UDP).
    Bypass,
}

/// One intercepted request/response pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapturedFlow {
    pub flow_id: String,
    pub session_id: String,
    pub ts_start: u64,
    pub ts_end: u64,
    pub method: String,
    pub url: String,
    #[serde(default)]
    pub request_headers: Headers,
    #[serde(default, with = "b64")]
    pub request_body: Vec<u8>,
    pub status: Option<u16>,
    #[serde(default)]
    pub response_headers: Headers,
    #[serde(default, with = "b64")]
    pub response_body: Vec<u8>,
    pub tls: Option<TlsInfo>,
    pub transport: Transport,
    pub intercepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CapturedFlow {
    /// A TCP request with no response yet.
    pub fn new(flow_id: &str, session_id: &str, method: &str, url: &str) -> Self {
        CapturedFlow {
            flow_id: flow_id.to_string(),
            session_id: session_id.to_string(),
            ts_start: 0,
            ts_end: 0,
            method: method.to_string(),
            url: url.to_string(),
            request_headers: Headers::new(),
            request_body: Vec::new(),
            status: None,
            response_headers: Headers::new(),
            response_body: Vec::new(),
            tls: None,
            transport: Transport::Tcp,
            intercepted: true,
            cache: None,
            error: None,
        }
    }

    pub fn parsed_url(&self) -> Option<Url> {
        Url::parse(&self.url).ok()
    }

    pub fn host(&self) -> Option<String> {
        self.parsed_url().and_then(|u| {
            u.host_str()
                .map(|h| h.trim_end_matches('.').to_ascii_lowercase())
        })
    }

    pub fn scheme(&self) -> Option<String> {
        self.parsed_url().map(|u| u.scheme().to_string())
    }

    pub fn port(&self) -> Option<u16> {
        self.parsed_url().and_then(|u| u.port_or_known_default())
    }

    pub fn completed_response(&self) -> bool {
        self.status.is_some()
    }

    /// Checks the structural invariants of a flow record.
    pub fn validate(&self) -> Result<()> {
        if self.ts_start > self.ts_end {
            return Err(Error::invalid(
                "flow",
                format!("{}: ts_start > ts_end", self.flow_id),
            ));
        }
        match self.parsed_url() {
            Some(u) if u.scheme() == "http" || u.scheme() == "https" => {}
            _ => {
                return Err(Error::invalid(
                    "flow",
                    format!("{}: url {:?} is not http(s)", self.flow_id, self.url),
                ))
            }
        }
        if self.transport == Transport::DroppedUdp
            && (!self.request_body.is_empty() || !self.response_body.is_empty())
        {
            return Err(Error::invalid(
                "flow",
                format!("{}: dropped datagram carries bodies", self.flow_id),
            ));
        }
        if let Some(tls) = &self.tls {
            if tls.cipher_negotiated.is_some() && !tls.handshake_completed {
                return Err(Error::invalid(
                    "flow",
                    format!(
                        "{}: negotiated cipher without completed handshake",
                        self.flow_id
                    ),
                ));
            }
        }
        Ok(())
    }
}

mod b64 {
    use super::*;

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        B64.decode(s.as_bytes()).map_err(serde::de::Error::custom)
    }
}

pub fn write_flow_line<W: Write>(mut w: W, flow: &CapturedFlow) -> std::io::Result<()> {
    let line = serde_json::to_string(flow).map_err(std::io::Error::other)?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")
}

pub fn read_flow_log(path: &Path) -> Result<Vec<CapturedFlow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut flows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let flow = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e))?;
        flows.push(flow);
    }
    Ok(flows)
}

pub fn write_flow_log(path: &Path, flows: &[CapturedFlow]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for flow in flows {
        write_flow_line(&mut file, flow).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Orders flows the way every analysis stage walks them: by start time, then id.
pub fn sort_flows(flows: &mut [CapturedFlow]) {
    flows.sort_by(|a, b| {
        a.ts_start
            .cmp(&b.ts_start)
            .then_with(|| a.flow_id.cmp(&b.flow_id))
    });
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn flow(id: &str, method: &str, url: &str) -> CapturedFlow {
        let mut f = CapturedFlow::new(id, "s", method, url);
        f.status = Some(200);
        f
    }
}
