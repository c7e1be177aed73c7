//! Connection-security verdicts: default scheme, certificate validation,
//! mixed content and handshake observations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::flow::{CapturedFlow, CertMode, CipherSuiteId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefaultProtocol {
    Https,
    Http,
    NoneObserved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertValidation {
    Rejected,
    Accepted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixedContent {
    Allowed,
    Upgraded,
    Blocked,
    NotTested,
}

/// IANA cipher suite code points using RC4.
pub const RC4_SUITES: &[(u16, &str)] = &[
    (0x0003, "TLS_RSA_EXPORT_WITH_RC4_40_MD5"),
    (0x0004, "TLS_RSA_WITH_RC4_128_MD5"),
    (0x0005, "TLS_RSA_WITH_RC4_128_SHA"),
    (0x0017, "TLS_DH_anon_EXPORT_WITH_RC4_40_MD5"),
    (0x0018, "TLS_DH_anon_WITH_RC4_128_MD5"),
    (0x0020, "TLS_KRB5_WITH_RC4_128_SHA"),
    (0x0024, "TLS_KRB5_WITH_RC4_128_MD5"),
    (0x0028, "TLS_KRB5_EXPORT_WITH_RC4_40_SHA"),
    (0x002B, "TLS_KRB5_EXPORT_WITH_RC4_40_MD5"),
    (0x008A, "TLS_PSK_WITH_RC4_128_SHA"),
    (0x008E, "TLS_DHE_PSK_WITH_RC4_128_SHA"),
    (0x0092, "TLS_RSA_PSK_WITH_RC4_128_SHA"),
    (0xC002, "TLS_ECDH_ECDSA_WITH_RC4_128_SHA"),
    (0xC007, "TLS_ECDHE_ECDSA_WITH_RC4_128_SHA"),
    (0xC00C, "TLS_ECDH_RSA_WITH_RC4_128_SHA"),
    (0xC011, "TLS_ECDHE_RSA_WITH_RC4_128_SHA"),
    (0xC016, "TLS_ECDH_anon_WITH_RC4_128_SHA"),
    (0xC033, "TLS_ECDHE_PSK_WITH_RC4_128_SHA"),
];

pub fn is_rc4(suite: CipherSuiteId) -> bool {
    RC4_SUITES.iter().any(|(c, _)| *c == suite.0)
}

/// Encrypted-DNS and OCSP endpoints recognized in traffic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointRegistry {
    /// `host/path-prefix` of DNS-over-HTTPS resolvers.
    pub doh_endpoints: Vec<String>,
    pub dot_port: u16,
    pub ocsp_hosts: Vec<String>,
}

impl Default for EndpointRegistry {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        EndpointRegistry {
            doh_endpoints: s(&[
                "dns.google/dns-query",
                "dns.google/resolve",
                "cloudflare-dns.com/dns-query",
                "mozilla.cloudflare-dns.com/dns-query",
                "1.1.1.1/dns-query",
                "1.0.0.1/dns-query",
                "8.8.8.8/dns-query",
                "dns.quad9.net/dns-query",
                "dns11.quad9.net/dns-query",
                "doh.opendns.com/dns-query",
                "dns.adguard.com/dns-query",
                "doh.cleanbrowsing.org/doh/",
                "dns.nextdns.io/",
                "doh.pub/dns-query",
                "dns.alidns.com/dns-query",
            ]),
            dot_port: 853,
            ocsp_hosts: s(&[
                "ocsp.digicert.com",
                "ocsp.pki.goog",
                "ocsp.sectigo.com",
                "ocsp.comodoca.com",
                "ocsp.usertrust.com",
                "ocsp.globalsign.com",
                "ocsp.godaddy.com",
                "ocsp.entrust.net",
                "ocsp.int-x3.letsencrypt.org",
                "r3.o.lencr.org",
                "status.geotrust.com",
            ]),
        }
    }
}

impl EndpointRegistry {
    fn is_doh(&self, flow: &CapturedFlow) -> bool {
        let ct = |h: &crate::flow::Headers| {
            h.content_type().as_deref() == Some("application/dns-message")
        };
        if ct(&flow.request_headers) || ct(&flow.response_headers) {
            return true;
        }
        let Some(u) = flow.parsed_url() else {
            return false;
        };
        let target = format!("{}{}", u.host_str().unwrap_or(""), u.path()).to_ascii_lowercase();
        self.doh_endpoints
            .iter()
            .any(|e| target.starts_with(e.as_str()))
    }

    fn is_ocsp(&self, flow: &CapturedFlow) -> bool {
        let ct = |h: &crate::flow::Headers| {
            matches!(
                h.content_type().as_deref(),
                Some("application/ocsp-request") | Some("application/ocsp-response")
            )
        };
        if ct(&flow.request_headers) || ct(&flow.response_headers) {
            return true;
        }
        let host = flow.host().unwrap_or_default();
        self.ocsp_hosts.contains(&host) || host.starts_with("ocsp.")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandshakeScan {
    pub rc4_offered: bool,
    pub doh_dot_observed: bool,
    pub ocsp_observed: bool,
    pub rc4_suites_seen: Vec<CipherSuiteId>,
}

pub fn scan_handshakes<'a>(
    flows: impl IntoIterator<Item = &'a CapturedFlow>,
    registry: &EndpointRegistry,
) -> HandshakeScan {
    let mut scan = HandshakeScan {
        rc4_offered: false,
        doh_dot_observed: false,
        ocsp_observed: false,
        rc4_suites_seen: Vec::new(),
    };
    for f in flows {
        if let Some(tls) = &f.tls {
            for s in tls.ciphersuites_offered.iter().filter(|s| is_rc4(**s)) {
                scan.rc4_offered = true;
                if !scan.rc4_suites_seen.contains(s) {
                    scan.rc4_suites_seen.push(*s);
                }
            }
        }
        if f.port() == Some(registry.dot_port) || registry.is_doh(f) {
            scan.doh_dot_observed = true;
        }
        if registry.is_ocsp(f) {
            scan.ocsp_observed = true;
        }
    }
    scan.rc4_suites_seen.sort();
    scan
}

fn by_start<'a>(flows: impl IntoIterator<Item = &'a CapturedFlow>) -> Vec<&'a CapturedFlow> {
    let mut v: Vec<&CapturedFlow> = flows.into_iter().collect();
    v.sort_by(|a, b| (a.ts_start, &a.flow_id).cmp(&(b.ts_start, &b.flow_id)));
    v
}

/// Scheme of the first request to the bare test host.
pub fn probe_default_protocol(flows: &[CapturedFlow], bare_host: &str) -> DefaultProtocol {
    let host = bare_host.to_ascii_lowercase();
    by_start(flows)
        .into_iter()
        .find(|f| f.host().as_deref() == Some(host.as_str()))
        .and_then(|f| f.scheme())
        .map(|s| {
            if s == "https" {
                DefaultProtocol::Https
            } else {
                DefaultProtocol::Http
            }
        })
        .unwrap_or(DefaultProtocol::NoneObserved)
}

/// Accepted only if a page request completed over a chain from the
/// untrusted CA. A handshake with no request is treated as a rejection.
pub fn probe_cert_validation(untrusted_flows: &[CapturedFlow], page_host: &str) -> CertValidation {
    let host = page_host.to_ascii_lowercase();
    let accepted = untrusted_flows.iter().any(|f| {
        f.host().as_deref() == Some(host.as_str())
            && f.status.is_some()
            && f.tls
                .as_ref()
                .is_some_and(|t| t.handshake_completed && t.cert_mode == CertMode::UntrustedCa)
    });
    if accepted {
        CertValidation::Accepted
    } else {
        CertValidation::Rejected
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedContentProbe {
    pub verdict: MixedContent,
    /// Verdict per insecure subresource URL.
    pub resources: BTreeMap<String, MixedContent>,
}

/// Verdict for an HTTPS page referencing HTTP-only subresources. The most
/// permissive behavior observed across the subresources decides.
pub fn probe_mixed_content(
    flows: &[CapturedFlow],
    mixed_page: &str,
    insecure: &[String],
) -> MixedContentProbe {
    let loaded = flows
        .iter()
        .any(|f| f.url == mixed_page && f.status.is_some());
    if !loaded {
        return MixedContentProbe {
            verdict: MixedContent::NotTested,
            resources: insecure
                .iter()
                .map(|u| (u.clone(), MixedContent::NotTested))
                .collect(),
        };
    }
    let mut resources = BTreeMap::new();
    for u in insecure {
        let upgraded = u
            .strip_prefix("http://")
            .map(|rest| format!("https://{rest}"));
        let v = if flows.iter().any(|f| f.url == *u) {
            MixedContent::Allowed
        } else if upgraded
            .as_ref()
            .is_some_and(|up| flows.iter().any(|f| f.url == *up))
        {
            MixedContent::Upgraded
        } else {
            MixedContent::Blocked
        };
        resources.insert(u.clone(), v);
    }
    let verdict = resources
        .values()
        .copied()
        .min()
        .unwrap_or(MixedContent::NotTested);
    MixedContentProbe { verdict, resources }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnSecReport {
    pub default_protocol: DefaultProtocol,
    pub cert_validation: CertValidation,
    pub mixed_content: MixedContent,
    pub mixed_content_resources: BTreeMap<String, MixedContent>,
    pub rc4_offered: bool,
    pub doh_dot_observed: bool,
    pub ocsp_observed: bool,
}

/// Hosts and URLs of the connection-security test pages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnSecTargets {
    pub bare_host: String,
    pub https_page: String,
    pub mixed_page: String,
    pub mixed_insecure: Vec<String>,
}

pub fn assess(
    main: &[CapturedFlow],
    untrusted: &[CapturedFlow],
    targets: &ConnSecTargets,
    registry: &EndpointRegistry,
) -> ConnSecReport {
    let https_host = url::Url::parse(&targets.https_page)
        .ok()
        .and_then(|u| u.host_str().map(str::to_string))
        .unwrap_or_default();
    let mixed = probe_mixed_content(main, &targets.mixed_page, &targets.mixed_insecure);
    let hs = scan_handshakes(main.iter().chain(untrusted), registry);
    ConnSecReport {
        default_protocol: probe_default_protocol(main, &targets.bare_host),
        cert_validation: probe_cert_validation(untrusted, &https_host),
        mixed_content: mixed.verdict,
        mixed_content_resources: mixed.resources,
        rc4_offered: hs.rc4_offered,
        doh_dot_observed: hs.doh_dot_observed,
        ocsp_observed: hs.ocsp_observed,
    }
}
