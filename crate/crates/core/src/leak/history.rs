use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pii::{url_encode, PiiScanner};
use crate::body::{decode_body, to_text};
use crate::digest::DigestKind;
use crate::flow::CapturedFlow;
use crate::profile::PiiType;
use crate::{psl, Error, Result, COLLECTOR_HOST};

static BUNDLED_FEATURES: &str = include_str!("../../data/features.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    SearchSuggest,
    SafetyCheck,
    Favicon,
    SiteCheck,
    None,
}

impl Feature {
    fn parse(s: &str) -> Option<Feature> {
        Some(match s {
            "search_suggest" => Feature::SearchSuggest,
            "safety_check" => Feature::SafetyCheck,
            "favicon" => Feature::Favicon,
            "site_check" => Feature::SiteCheck,
            _ => return None,
        })
    }
}

/// Known browser-feature endpoints that legitimately receive visited sites.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureRegistry {
    entries: Vec<(String, Option<String>, Feature)>,
}

impl FeatureRegistry {
    /// Lines of `host path-prefix feature`; a path of `*` matches any path.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::invalid("feature registry", format!("line {}: {line:?}", n + 1));
            if cols.len() != 3 {
                return Err(bad());
            }
            let feature = Feature::parse(cols[2]).ok_or_else(bad)?;
            let path = (cols[1] != "*").then(|| cols[1].to_string());
            entries.push((cols[0].to_ascii_lowercase(), path, feature));
        }
        Ok(FeatureRegistry { entries })
    }

    pub fn bundled() -> Self {
        FeatureRegistry::parse(BUNDLED_FEATURES).expect("bundled feature registry parses")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        FeatureRegistry::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn insert(&mut self, host: &str, path_prefix: Option<&str>, feature: Feature) {
        self.entries.push((
            host.to_ascii_lowercase(),
            path_prefix.map(str::to_string),
            feature,
        ));
    }

    pub fn classify(&self, host: &str, path: &str) -> Feature {
        self.entries
            .iter()
            .find(|(h, p, _)| h == host && p.as_ref().is_none_or(|p| path.starts_with(p.as_str())))
            .map(|(_, _, f)| *f)
            .unwrap_or(Feature::None)
    }

    /// Classification over all requests to a host: the first listed request
    /// that hits the registry decides.
    fn classify_flows(&self, host: &str, flows: &[&CapturedFlow]) -> Feature {
        flows
            .iter()
            .filter_map(|f| f.parsed_url())
            .map(|u| self.classify(host, u.path()))
            .find(|f| *f != Feature::None)
            .unwrap_or(Feature::None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryFinding {
    pub destination_host: String,
    pub destination_org: Option<String>,
    pub visited_sites_exposed: BTreeSet<String>,
    pub exposure_fraction: f64,
    pub co_sent_pii: BTreeSet<PiiType>,
    pub feature: Feature,
    pub flow_ids: Vec<String>,
}

/// A visited test page: its host is the unit counted by the fraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitedPage {
    pub host: String,
    pub urls: Vec<String>,
}

impl VisitedPage {
    /// Groups page URLs by host, preserving first-seen order.
    pub fn from_urls<'a>(urls: impl IntoIterator<Item = &'a str>) -> Vec<VisitedPage> {
        let mut out: Vec<VisitedPage> = Vec::new();
        for u in urls {
            let Some(host) = url::Url::parse(u)
                .ok()
                .and_then(|p| p.host_str().map(str::to_ascii_lowercase))
            else {
                continue;
            };
            match out.iter_mut().find(|p| p.host == host) {
                Some(p) => p.urls.push(u.to_string()),
                None => out.push(VisitedPage {
                    host,
                    urls: vec![u.to_string()],
                }),
            }
        }
        out
    }
}

pub struct HistoryContext<'a> {
    pub visited: &'a [VisitedPage],
    pub baseline_hosts: &'a BTreeSet<String>,
    pub scanner: &'a PiiScanner,
    pub registry: &'a FeatureRegistry,
    pub threshold: f64,
}

/// Lowercased searchable request text: URL, headers and decoded body.
pub fn request_text(flow: &CapturedFlow) -> String {
    let mut s = flow.url.to_lowercase();
    s.push('\n');
    for (k, v) in flow.request_headers.iter() {
        s.push_str(&format!("{k}: {v}\n").to_lowercase());
    }
    let body = decode_body(&flow.request_headers, &flow.request_body)
        .unwrap_or_else(|_| flow.request_body.clone());
    s.push_str(&to_text(&flow.request_headers, &body).to_lowercase());
    s
}

fn is_host_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'-'
}

/// Substring match that does not split a hostname label.
pub fn contains_host(hay: &str, host: &str) -> bool {
    let bytes = hay.as_bytes();
    let mut start = 0;
    while let Some(i) = hay[start..].find(host) {
        let at = start + i;
        let end = at + host.len();
        let before_ok = at == 0 || !is_host_char(bytes[at - 1]);
        let after_ok = end == bytes.len() || !is_host_char(bytes[end]);
        if before_ok && after_ok {
            return true;
        }
        start = at + 1;
    }
    false
}

fn site_needles(page: &VisitedPage) -> Vec<String> {
    let mut forms: Vec<String> = vec![page.host.clone()];
    forms.extend(page.urls.iter().cloned());
    let mut out = Vec::new();
    for f in &forms {
        for kind in DigestKind::ALL {
            out.push(kind.hex(f.as_bytes()));
        }
        let enc = url_encode(f).to_lowercase();
        if enc != f.to_lowercase() {
            out.push(enc);
        }
    }
    out
}

/// True if any form of the visited page appears in the text.
pub fn exposes(hay: &str, page: &VisitedPage) -> bool {
    contains_host(hay, &page.host) || site_needles(page).iter().any(|n| hay.contains(n.as_str()))
}

/// Destinations outside the baseline and outside every visited site that
/// receive more than `threshold` of the visited sites.
pub fn detect_history_exposure(
    flows: &[CapturedFlow],
    ctx: &HistoryContext<'_>,
) -> Vec<HistoryFinding> {
    let visited_sites: BTreeSet<String> = ctx.visited.iter().map(|p| psl::site(&p.host)).collect();
    let total = ctx.visited.len();
    if total == 0 {
        return Vec::new();
    }
    let mut by_host: BTreeMap<String, Vec<&CapturedFlow>> = BTreeMap::new();
    for f in flows {
        if let Some(h) = f.host() {
            by_host.entry(h).or_default().push(f);
        }
    }
    let mut out = Vec::new();
    for (host, host_flows) in by_host {
        if host == COLLECTOR_HOST
            || ctx.baseline_hosts.contains(&host)
            || visited_sites.contains(&psl::site(&host))
        {
            continue;
        }
        let texts: Vec<String> = host_flows.iter().map(|f| request_text(f)).collect();
        let exposed: BTreeSet<String> = ctx
            .visited
            .iter()
            .filter(|p| texts.iter().any(|t| exposes(t, p)))
            .map(|p| p.host.clone())
            .collect();
        let fraction = exposed.len() as f64 / total as f64;
        if fraction <= ctx.threshold {
            continue;
        }
        let co_sent_pii = host_flows
            .iter()
            .flat_map(|f| ctx.scanner.scan(f))
            .map(|f| f.pii_type)
            .collect();
        out.push(HistoryFinding {
            destination_org: ctx.scanner.orgs().lookup(&host).map(str::to_string),
            feature: ctx.registry.classify_flows(&host, &host_flows),
            destination_host: host,
            visited_sites_exposed: exposed,
            exposure_fraction: fraction,
            co_sent_pii,
            flow_ids: host_flows.iter().map(|f| f.flow_id.clone()).collect(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn host_boundaries() {
        assert!(contains_host("q=news.test&x", "news.test"));
        assert!(contains_host("https://www.news.test/", "news.test"));
        assert!(!contains_host("sportsnews.test", "news.test"));
        assert!(!contains_host("news.tester", "news.test"));
        assert!(contains_host("a sportsnews.test news.test", "news.test"));
    }

    #[test]
    fn registry() {
        let r = FeatureRegistry::bundled();
        assert_eq!(
            r.classify("suggestqueries.google.com", "/complete"),
            Feature::SearchSuggest
        );
        assert_eq!(
            r.classify("www.google.com", "/complete/search"),
            Feature::SearchSuggest
        );
        assert_eq!(r.classify("www.google.com", "/search"), Feature::None);
        assert_eq!(
            r.classify("safebrowsing.googleapis.com", "/v4"),
            Feature::SafetyCheck
        );
        assert!(FeatureRegistry::parse("a.test * bogus\n").is_err());
    }

    #[test]
    fn visited_grouping() {
        let v = VisitedPage::from_urls(["http://a.test/", "https://a.test/x", "http://b.test/"]);
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].urls.len(), 2);
    }

    #[test]
    fn digest_forms_expose() {
        let p = VisitedPage {
            host: "news.test".into(),
            urls: vec!["http://news.test/".into()],
        };
        assert!(exposes(&DigestKind::Sha256.hex(b"news.test"), &p));
        assert!(exposes("u=http%3a%2f%2fnews.test%2f", &p));
        assert!(!exposes("nothing here", &p));
    }
}
