//! Deterministic stand-in for an in-app browser. Loads pages through the
//! gateway, applies the behaviors of its spec, and posts the tripwire and
//! probe reports a WebView-hosted script would have sent.

use std::collections::BTreeMap;
use std::sync::{Arc, LazyLock};
use std::time::Duration;

use gauntlet_core::body::decode_body;
use gauntlet_core::digest::{attrs_digest, sha256_hex};
use gauntlet_core::dom::{tripwire_report_json, DomElement, DomSnapshot, ElementTag};
use gauntlet_core::filter::{FilterSet, RequestContext, ResourceType};
use gauntlet_core::flow::Headers;
use gauntlet_core::leak::{planted_value, Location, ProbeReport, ProbeState, PROBED_APIS};
use gauntlet_core::profile::DeviceProfile;
use gauntlet_core::subject::{MixedContentPolicy, Subject, SubjectBehaviorSpec};
use gauntlet_core::COLLECTOR_HOST;
use regex::Regex;
use tracing::{debug, info, warn};
use url::Url;

use super::client::ProxyClient;
use super::profile::ProfileGenerator;
use super::Env;
use crate::error::{Error, Result};
use crate::gateway::inject::MARKER;
use crate::gateway::now_ms;
use crate::http1::Response;

const MAX_REDIRECTS: usize = 5;
const PROBE_SCRIPT: &str = "/probe.js";

static TAG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?is)<script\b([^>]*)>(.*?)</script\s*>|<(link|img)\b([^>]*)>").expect("tag regex")
});
static ATTR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"([^\s=/>"']+)(?:\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s"'>]+)))?"#)
        .expect("attr regex")
});

fn unescape(s: &str) -> String {
    s.replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&#x27;", "'")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&")
}

/// A `<script>`, `<link>` or `<img>` found in markup, in document order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tag {
    pub name: String,
    pub attrs: Vec<(String, String)>,
    /// Inline script text, when the script has no `src`.
    pub inline: Option<String>,
}

impl Tag {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    fn reference(&self) -> Option<&str> {
        match self.name.as_str() {
            "link" => self.attr("href"),
            _ => self.attr("src"),
        }
        .filter(|v| !v.trim().is_empty())
    }

    fn is_stylesheet(&self) -> bool {
        self.attr("rel").is_some_and(|r| {
            r.split_whitespace()
                .any(|t| t.eq_ignore_ascii_case("stylesheet"))
        })
    }

    fn resource_type(&self) -> ResourceType {
        match self.name.as_str() {
            "script" => ResourceType::Script,
            "img" => ResourceType::Image,
            _ if self.is_stylesheet() => ResourceType::Stylesheet,
            _ => ResourceType::Other,
        }
    }

    fn fetch_dest(&self) -> &'static str {
        match self.resource_type() {
            ResourceType::Script => "script",
            ResourceType::Image => "image",
            ResourceType::Stylesheet => "style",
            _ => "empty",
        }
    }
}

pub fn parse_tags(html: &str) -> Vec<Tag> {
    TAG.captures_iter(html)
        .map(|c| {
            let (name, raw, inline) = match c.get(1) {
                Some(a) => (
                    "script".to_string(),
                    a.as_str(),
                    c.get(2).map(|m| m.as_str().to_string()),
                ),
                None => (
                    c[3].to_ascii_lowercase(),
                    c.get(4).map_or("", |m| m.as_str()),
                    None,
                ),
            };
            let attrs: Vec<(String, String)> = ATTR
                .captures_iter(raw)
                .map(|a| {
                    let v = a
                        .get(2)
                        .or(a.get(3))
                        .or(a.get(4))
                        .map_or("", |m| m.as_str());
                    (a[1].to_ascii_lowercase(), unescape(v))
                })
                .collect();
            let mut tag = Tag {
                name,
                attrs,
                inline: None,
            };
            if tag.name == "script" && tag.attr("src").is_none() {
                tag.inline = inline;
            }
            tag
        })
        .collect()
}

/// `strict-origin-when-cross-origin`, the WebView default.
fn referrer(page: &Url, target: &Url) -> Option<String> {
    if page.scheme() == "https" && target.scheme() == "http" {
        return None;
    }
    if page.origin() == target.origin() {
        let mut p = page.clone();
        p.set_fragment(None);
        return Some(p.to_string());
    }
    Some(format!("{}/", page.origin().ascii_serialization()))
}

/// Outcome of one page load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageLoad {
    pub url: String,
    pub status: u16,
    pub snapshot: Option<DomSnapshot>,
}

pub struct SimulatedSubject {
    pub subject: Subject,
    pub spec: SubjectBehaviorSpec,
    lists: Arc<FilterSet>,
    profiles: ProfileGenerator,
    profile: Option<DeviceProfile>,
    client: Option<ProxyClient>,
    opened: usize,
}

impl SimulatedSubject {
    pub fn new(
        subject: Subject,
        spec: SubjectBehaviorSpec,
        lists: Arc<FilterSet>,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        Ok(SimulatedSubject {
            subject,
            spec,
            lists,
            profiles: ProfileGenerator::new(seed),
            profile: None,
            client: None,
            opened: 0,
        })
    }

    pub fn reset_profile(&mut self) -> DeviceProfile {
        let p = self.profiles.reset();
        self.profile = Some(p.clone());
        p
    }

    pub fn profile(&self) -> Option<&DeviceProfile> {
        self.profile.as_ref()
    }

    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Subject {
            subject: self.subject.package_name.clone(),
            detail: detail.into(),
        }
    }

    /// Starts the subject: waits out its launch delay, then sends its
    /// launch-time identifier beacons.
    pub async fn launch(&mut self, env: &Env) -> Result<()> {
        if self.spec.launch_delay_ms > 0 {
            tokio::time::sleep(Duration::from_millis(self.spec.launch_delay_ms)).await;
        }
        let client = ProxyClient::new(
            env.proxy,
            env.trusted_root.clone(),
            self.spec.accepts_bad_cert,
            env.timeout,
        )?;
        self.client = Some(client);
        self.opened = 0;
        if self.profile.is_none() {
            self.reset_profile();
        }
        self.send_leaks().await;
        Ok(())
    }

    pub fn stop(&mut self) {
        self.client = None;
    }

    fn client(&self) -> Result<&ProxyClient> {
        self.client.as_ref().ok_or_else(|| self.err("not launched"))
    }

    fn base_headers(&self) -> Headers {
        let mut h = Headers::new();
        h.append(
            "User-Agent",
            "Mozilla/5.0 (Linux; Android 9; wv) AppleWebKit/537.36 (KHTML, like Gecko) Version/4.0 Chrome/74.0.3729.136 Mobile Safari/537.36",
        );
        if self.spec.sends_xrw_header {
            h.append("X-Requested-With", self.subject.package_name.clone());
        }
        h
    }

    async fn send_leaks(&self) {
        let Some(profile) = self.profile.as_ref() else {
            return;
        };
        for leak in &self.spec.leaks {
            let value = planted_value(profile, leak.pii_type, leak.encoding);
            let Ok(mut url) = Url::parse(&leak.destination) else {
                continue;
            };
            let mut h = self.base_headers();
            let (method, body) = match leak.location {
                Location::Url => {
                    url.query_pairs_mut().append_pair("d", &value);
                    ("GET", Vec::new())
                }
                Location::Header => {
                    h.append("X-Device-Id", value);
                    ("GET", Vec::new())
                }
                Location::Body => {
                    h.append("Content-Type", "application/x-www-form-urlencoded");
                    ("POST", format!("id={value}").into_bytes())
                }
            };
            if let Err(e) = self.fetch(method, &url, h, &body).await {
                debug!(error = %e, %url, "leak beacon failed");
            }
        }
    }

    async fn fetch(
        &self,
        method: &str,
        url: &Url,
        headers: Headers,
        body: &[u8],
    ) -> Result<Response> {
        self.client()?.send(method, url, &headers, body).await
    }

    /// Opens a target as the test harness hands it over: an absolute URL,
    /// or a bare host completed with the subject's default scheme.
    pub async fn open(&mut self, target: &str) -> Result<PageLoad> {
        let url = if target.contains("://") {
            Url::parse(target)
        } else {
            Url::parse(&format!(
                "{}://{}/",
                self.spec.default_scheme.as_str(),
                target
            ))
        }
        .map_err(|e| self.err(format!("bad target {target}: {e}")))?;
        let load = self.load_page(url.clone()).await;
        let i = self.opened;
        self.opened += 1;
        if let Some(h) = self.spec.sends_history_to.clone() {
            let before = (i as f64 * h.fraction).floor();
            let after = ((i + 1) as f64 * h.fraction).floor();
            if after > before {
                if let Ok(mut dest) = Url::parse(&h.destination) {
                    dest.query_pairs_mut().append_pair("q", url.as_str());
                    if let Err(e) = self.fetch("GET", &dest, self.base_headers(), &[]).await {
                        debug!(error = %e, "history beacon failed");
                    }
                }
            }
        }
        load
    }

    async fn load_page(&self, start: Url) -> Result<PageLoad> {
        let mut url = start;
        let mut resp = None;
        for _ in 0..=MAX_REDIRECTS {
            let mut h = self.base_headers();
            h.append("Accept", "text/html,application/xhtml+xml,*/*;q=0.8");
            h.append("Sec-Fetch-Dest", "document");
            let r = self.fetch("GET", &url, h, &[]).await?;
            if matches!(r.head.status, 301 | 302 | 303 | 307 | 308) {
                let loc = r.head.headers.get("location").unwrap_or_default();
                url = url
                    .join(loc)
                    .map_err(|e| self.err(format!("bad redirect {loc}: {e}")))?;
                continue;
            }
            resp = Some(r);
            break;
        }
        let resp = resp.ok_or_else(|| self.err(format!("too many redirects from {url}")))?;
        let status = resp.head.status;
        if !(200..300).contains(&status) {
            return Err(self.err(format!("{url} answered {status}")));
        }
        let is_html = resp
            .head
            .headers
            .content_type()
            .is_some_and(|c| c.contains("html"));
        if !is_html {
            return Ok(PageLoad {
                url: url.to_string(),
                status,
                snapshot: None,
            });
        }
        let body = decode_body(&resp.head.headers, &resp.body).unwrap_or(resp.body);
        let html = String::from_utf8_lossy(&body).into_owned();
        let snapshot = self.render(&url, &html).await;
        Ok(PageLoad {
            url: url.to_string(),
            status,
            snapshot,
        })
    }

    /// Fetches subresources, then reports the DOM if the tripwire loaded.
    async fn render(&self, page: &Url, html: &str) -> Option<DomSnapshot> {
        let mut tags = parse_tags(html);
        if let Some(src) = &self.spec.injects_script {
            tags.push(Tag {
                name: "script".into(),
                attrs: vec![("src".into(), src.clone())],
                inline: None,
            });
        }
        let exempt = self.spec.exempt_types();
        let mut elements = Vec::new();
        let mut tripwire: Option<Url> = None;
        let mut probe_page = false;

        for tag in &tags {
            let attrs = tag.attrs.iter().map(|(k, v)| (k.as_str(), v.as_str()));
            if tag.name == "script" && tag.inline.is_some() {
                let text = tag.inline.as_deref().unwrap_or_default();
                elements.push(DomElement {
                    tag: ElementTag::Script,
                    url: String::new(),
                    attrs_digest: attrs_digest(attrs),
                    inline_digest: Some(sha256_hex(text.as_bytes())),
                });
                continue;
            }
            let Some(reference) = tag.reference() else {
                continue;
            };
            let Ok(target) = page.join(reference) else {
                continue;
            };
            if !matches!(target.scheme(), "http" | "https") {
                continue;
            }
            let rtype = tag.resource_type();
            let is_collector = target.host_str() == Some(COLLECTOR_HOST);
            if tag.attr(MARKER).is_some() || is_collector {
                if self
                    .get_resource(page, &target, tag.fetch_dest())
                    .await
                    .is_some()
                {
                    tripwire = Some(target);
                }
                continue;
            }
            if self.spec.blocks_filterlisted && !exempt.contains(&rtype) {
                let blocked = RequestContext::new(target.as_str(), page.as_str(), rtype)
                    .map(|ctx| self.lists.matches(&ctx).is_blocked())
                    .unwrap_or(false);
                if blocked {
                    debug!(url = %target, "blocked by filter lists");
                    continue;
                }
            }
            if tag.name != "img" {
                elements.push(DomElement {
                    tag: if tag.name == "script" {
                        ElementTag::Script
                    } else {
                        ElementTag::Link
                    },
                    url: target.to_string(),
                    attrs_digest: attrs_digest(attrs),
                    inline_digest: None,
                });
            }
            if tag.name == "script" && target.path().ends_with(PROBE_SCRIPT) {
                probe_page = true;
            }
            if tag.name == "link" && !tag.is_stylesheet() {
                continue;
            }
            let fetch_url = if page.scheme() == "https" && target.scheme() == "http" {
                match self.spec.mixed_content {
                    MixedContentPolicy::Allow => Some(target.clone()),
                    MixedContentPolicy::Upgrade => {
                        let mut up = target.clone();
                        let _ = up.set_scheme("https");
                        Some(up)
                    }
                    MixedContentPolicy::Block => None,
                }
            } else {
                Some(target.clone())
            };
            if let Some(u) = fetch_url {
                self.get_resource(page, &u, tag.fetch_dest()).await;
            }
        }

        let tripwire = tripwire?;
        let snapshot = DomSnapshot {
            page_url: page.to_string(),
            elements,
            collected_at: now_ms(),
        };
        let origin = format!("{}://{}", tripwire.scheme(), COLLECTOR_HOST);
        self.post_report(
            &origin,
            "/report",
            tripwire_report_json(&snapshot).into_bytes(),
        )
        .await;
        if probe_page {
            let report = self.probe_report(page);
            if let Ok(body) = serde_json::to_vec(&report) {
                self.post_report(&origin, "/probe", body).await;
            }
        }
        Some(snapshot)
    }

    fn probe_report(&self, page: &Url) -> ProbeReport {
        let probes: BTreeMap<String, ProbeState> = PROBED_APIS
            .iter()
            .map(|api| {
                let state = if self.spec.webapi_grants.contains(*api) {
                    ProbeState::Granted
                } else if self.spec.webapi_prompts.contains(*api) {
                    ProbeState::Prompt
                } else {
                    ProbeState::Denied
                };
                (api.to_string(), state)
            })
            .collect();
        ProbeReport {
            page_url: page.to_string(),
            probes,
            ts: now_ms(),
        }
    }

    async fn get_resource(&self, page: &Url, url: &Url, dest: &str) -> Option<Response> {
        let mut h = self.base_headers();
        h.append("Sec-Fetch-Dest", dest);
        if let Some(r) = referrer(page, url) {
            h.append("Referer", r);
        }
        match self.fetch("GET", url, h, &[]).await {
            Ok(r) if (200..400).contains(&r.head.status) => Some(r),
            Ok(r) => {
                debug!(%url, status = r.head.status, "subresource failed");
                None
            }
            Err(e) => {
                debug!(%url, error = %e, "subresource failed");
                None
            }
        }
    }

    async fn post_report(&self, origin: &str, path: &str, body: Vec<u8>) {
        let Ok(url) = Url::parse(&format!("{origin}{path}")) else {
            return;
        };
        let mut h = self.base_headers();
        h.append("Content-Type", "application/json");
        match self.fetch("POST", &url, h, &body).await {
            Ok(r) if r.head.status == 204 => {}
            Ok(r) => warn!(%url, status = r.head.status, "collector rejected report"),
            Err(e) => debug!(%url, error = %e, "report not delivered"),
        }
    }

    pub fn describe(&self) {
        info!(subject = %self.subject.package_name, spec = ?self.spec, "simulated subject");
    }
}
