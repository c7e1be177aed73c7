//! Tripwire DOM snapshots, baseline diffs, element classification and
//! content-injection detection.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use url::Url;

use crate::filter::{FilterSet, RequestContext, ResourceType, RuleHit, SetVerdict};
use crate::{Error, Result, COLLECTOR_HOST};

/// Path of the tripwire asset on the collector host.
pub const TRIPWIRE_PATH: &str = "/tripwire.js";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementTag {
    Script,
    Link,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DomElement {
    pub tag: ElementTag,
    /// Resolved absolute URL, empty for inline elements.
    #[serde(default)]
    pub url: String,
    pub attrs_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline_digest: Option<String>,
}

/// Identity used for set difference: ordering is ignored, attributes are not.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ElementKey {
    pub tag: ElementTag,
    pub locator: String,
    pub attrs_digest: String,
}

impl DomElement {
    pub fn is_inline(&self) -> bool {
        self.url.is_empty()
    }

    /// The URL, or `inline:<digest>` for inline elements.
    pub fn locator(&self) -> String {
        if self.is_inline() {
            format!("inline:{}", self.inline_digest.as_deref().unwrap_or(""))
        } else {
            self.url.clone()
        }
    }

    pub fn key(&self) -> ElementKey {
        ElementKey {
            tag: self.tag,
            locator: self.locator(),
            attrs_digest: self.attrs_digest.clone(),
        }
    }

    pub fn host(&self) -> Option<String> {
        Url::parse(&self.url)
            .ok()
            .and_then(|u| u.host_str().map(|h| h.to_ascii_lowercase()))
    }

    /// The gateway's own injected element.
    pub fn is_tripwire(&self) -> bool {
        self.host().as_deref() == Some(COLLECTOR_HOST)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomSnapshot {
    pub page_url: String,
    pub elements: Vec<DomElement>,
    pub collected_at: u64,
}

/// Wire form of a tripwire POST body. Unknown fields are ignored.
#[derive(Debug, Deserialize)]
struct WireReport {
    page_url: String,
    elements: Vec<DomElement>,
    ts: u64,
}

/// Parses and validates a tripwire report body.
pub fn parse_tripwire_report(body: &[u8]) -> Result<DomSnapshot> {
    let wire: WireReport =
        serde_json::from_slice(body).map_err(|e| Error::MalformedReport(e.to_string()))?;
    if Url::parse(&wire.page_url).is_err() {
        return Err(Error::MalformedReport(format!(
            "page_url {:?} is not absolute",
            wire.page_url
        )));
    }
    for (i, el) in wire.elements.iter().enumerate() {
        if el.is_inline() != el.inline_digest.is_some() {
            return Err(Error::MalformedReport(format!(
                "element {i}: url and inline_digest must be exclusive"
            )));
        }
        if el.attrs_digest.is_empty() || !el.attrs_digest.bytes().all(|c| c.is_ascii_hexdigit()) {
            return Err(Error::MalformedReport(format!(
                "element {i}: attrs_digest is not hex"
            )));
        }
    }
    Ok(DomSnapshot {
        page_url: wire.page_url,
        elements: wire.elements,
        collected_at: wire.ts,
    })
}

/// Serializes a snapshot in the collector wire format.
pub fn tripwire_report_json(snapshot: &DomSnapshot) -> String {
    serde_json::json!({
        "page_url": snapshot.page_url,
        "elements": snapshot.elements,
        "ts": snapshot.collected_at,
    })
    .to_string()
}

/// Per-page patterns of elements that legitimately vary between loads.
///
/// Text format, one entry per line: `<page-pattern> <element-pattern>`.
/// `*` is a wildcard; inline elements are addressed as `inline:<digest>`.
/// `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DynamicAllowlist {
    entries: Vec<(String, String)>,
}

impl DynamicAllowlist {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(page), Some(element), None) => {
                    entries.push((page.to_string(), element.to_string()))
                }
                _ => {
                    return Err(Error::invalid(
                        "allowlist",
                        format!(
                            "line {}: expected `<page-pattern> <element-pattern>`",
                            n + 1
                        ),
                    ))
                }
            }
        }
        Ok(DynamicAllowlist { entries })
    }

    pub fn push(&mut self, page_pattern: &str, element_pattern: &str) {
        self.entries
            .push((page_pattern.to_string(), element_pattern.to_string()));
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(p, e)| format!("{p} {e}\n"))
            .collect()
    }

    pub fn allows(&self, page_url: &str, el: &DomElement) -> bool {
        let locator = el.locator();
        self.entries
            .iter()
            .any(|(p, e)| glob_match(p, page_url) && glob_match(e, &locator))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn glob_match(pattern: &str, text: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == text;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !text.starts_with(first) || text.len() < first.len() + last.len() || !text.ends_with(last) {
        return false;
    }
    let mut rest = &text[first.len()..text.len() - last.len()];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(i) => rest = &rest[i + mid.len()..],
            None => return false,
        }
    }
    true
}

/// Raw element-level difference before classification.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementDiff {
    pub page_url: String,
    pub missing: Vec<DomElement>,
    pub added: Vec<DomElement>,
}

impl ElementDiff {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.added.is_empty()
    }
}

/// Multiset difference of two snapshots of the same page, after removing the
/// tripwire's own element and allowlisted dynamic elements from both sides.
pub fn diff(
    baseline: &DomSnapshot,
    subject: &DomSnapshot,
    allowlist: &DynamicAllowlist,
) -> Result<ElementDiff> {
    if baseline.page_url != subject.page_url {
        return Err(Error::PageMismatch {
            baseline: baseline.page_url.clone(),
            subject: subject.page_url.clone(),
        });
    }
    let page = &baseline.page_url;
    let keep = |el: &&DomElement| !el.is_tripwire() && !allowlist.allows(page, el);
    let base: Vec<&DomElement> = baseline.elements.iter().filter(keep).collect();
    let subj: Vec<&DomElement> = subject.elements.iter().filter(keep).collect();
    Ok(ElementDiff {
        page_url: page.clone(),
        missing: multiset_minus(&base, &subj),
        added: multiset_minus(&subj, &base),
    })
}

fn multiset_minus(a: &[&DomElement], b: &[&DomElement]) -> Vec<DomElement> {
    let mut budget: BTreeMap<ElementKey, usize> = BTreeMap::new();
    for el in b {
        *budget.entry(el.key()).or_insert(0) += 1;
    }
    let mut out = Vec::new();
    for el in a {
        match budget.get_mut(&el.key()) {
            Some(n) if *n > 0 => *n -= 1,
            _ => out.push((*el).clone()),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    TrackerListed,
    Analytics,
    Ad,
    Widget,
    Other,
}

/// Host and keyword tables for elements not covered by the filter lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heuristics {
    pub widget_hosts: Vec<String>,
    pub widget_inline_digests: Vec<String>,
    pub analytics_keywords: Vec<String>,
    pub ad_keywords: Vec<String>,
    pub widget_keywords: Vec<String>,
}

impl Default for Heuristics {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        Heuristics {
            widget_hosts: s(&[
                "platform.twitter.com",
                "syndication.twitter.com",
                "platform.linkedin.com",
                "apis.google.com",
                "assets.pinterest.com",
                "widgets.pinterest.com",
                "disqus.com",
                "addthis.com",
                "sharethis.com",
                "platform.instagram.com",
            ]),
            widget_inline_digests: Vec::new(),
            analytics_keywords: s(&[
                "analytics",
                "gtag",
                "googletagmanager",
                "/stats",
                "metrics",
                "telemetry",
                "pixel",
                "beacon",
                "/track",
                "hotjar",
                "mixpanel",
                "segment.",
                "scorecardresearch",
                "quantserve",
                "chartbeat",
            ]),
            ad_keywords: s(&[
                "/ads/",
                "/ad/",
                "ads.",
                "adserver",
                "adsystem",
                "doubleclick",
                "adsbygoogle",
                "googlesyndication",
                "banner",
                "sponsor",
                "advert",
                "adnxs",
                "taboola",
                "outbrain",
                "criteo",
                "prebid",
            ]),
            widget_keywords: s(&[
                "widget", "/embed", "plugins", "/share", "social", "comments",
            ]),
        }
    }
}

impl Heuristics {
    fn classify_url(&self, url: &str, host: &str) -> Classification {
        let lower = url.to_ascii_lowercase();
        let has = |words: &[String]| words.iter().any(|w| lower.contains(w.as_str()));
        if self
            .widget_hosts
            .iter()
            .any(|h| host == h || host.ends_with(&format!(".{h}")))
        {
            Classification::Widget
        } else if has(&self.analytics_keywords) {
            Classification::Analytics
        } else if has(&self.ad_keywords) {
            Classification::Ad
        } else if has(&self.widget_keywords) {
            Classification::Widget
        } else {
            Classification::Other
        }
    }
}

/// Classifies one element. Lists are consulted as a script request for
/// `script` and a stylesheet request for `link`.
pub fn classify_element(
    el: &DomElement,
    page_url: &str,
    lists: &FilterSet,
    heuristics: &Heuristics,
) -> (Classification, Option<RuleHit>) {
    if el.is_inline() {
        let known_widget = el.inline_digest.as_ref().is_some_and(|d| {
            heuristics
                .widget_inline_digests
                .iter()
                .any(|w| w.eq_ignore_ascii_case(d))
        });
        let class = if known_widget {
            Classification::Widget
        } else {
            Classification::Other
        };
        return (class, None);
    }
    let rt = match el.tag {
        ElementTag::Script => ResourceType::Script,
        ElementTag::Link => ResourceType::Stylesheet,
    };
    if let Ok(ctx) = RequestContext::new(&el.url, page_url, rt) {
        if let SetVerdict::Blocked(hit) = lists.matches(&ctx) {
            return (Classification::TrackerListed, Some(hit));
        }
    }
    let host = el.host().unwrap_or_default();
    (heuristics.classify_url(&el.url, &host), None)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedElement {
    #[serde(flatten)]
    pub element: DomElement,
    pub classification: Classification,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleHit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomDiff {
    pub page_url: String,
    pub missing: Vec<ClassifiedElement>,
    pub added: Vec<ClassifiedElement>,
}

impl DomDiff {
    pub fn classify(raw: ElementDiff, lists: &FilterSet, heuristics: &Heuristics) -> DomDiff {
        let page = raw.page_url.clone();
        let run = |els: Vec<DomElement>| {
            els.into_iter()
                .map(|element| {
                    let (classification, rule) =
                        classify_element(&element, &page, lists, heuristics);
                    ClassifiedElement {
                        element,
                        classification,
                        rule,
                    }
                })
                .collect()
        };
        DomDiff {
            page_url: raw.page_url,
            missing: run(raw.missing),
            added: run(raw.added),
        }
    }

    pub fn missing_tracker_listed(&self) -> usize {
        self.missing
            .iter()
            .filter(|e| e.classification == Classification::TrackerListed)
            .count()
    }
}

/// Aggregate view of per-page diffs used by the score.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomDiffSummary {
    pub pages_compared: usize,
    pub missing_by_class: BTreeMap<Classification, usize>,
    pub added_by_class: BTreeMap<Classification, usize>,
    pub tracker_listed_missing: usize,
}

impl DomDiffSummary {
    pub fn from_diffs(diffs: &[DomDiff]) -> Self {
        let mut s = DomDiffSummary {
            pages_compared: diffs.len(),
            ..Default::default()
        };
        for d in diffs {
            for e in &d.missing {
                *s.missing_by_class.entry(e.classification).or_insert(0) += 1;
            }
            for e in &d.added {
                *s.added_by_class.entry(e.classification).or_insert(0) += 1;
            }
            s.tracker_listed_missing += d.missing_tracker_listed();
        }
        s
    }

    pub fn blocks_tracking_content(&self) -> bool {
        self.tracker_listed_missing > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionReason {
    RecurringAcrossPages,
    ForeignHost,
    RecurringFromForeignHost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionFinding {
    pub tag: ElementTag,
    pub locator: String,
    pub source_host: Option<String>,
    pub pages: Vec<String>,
    pub reason: InjectionReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub findings: Vec<InjectionFinding>,
}

/// Flags added elements that recur on two or more pages, or whose host the
/// baseline never contacted.
pub fn detect_injection(diffs: &[DomDiff], baseline_hosts: &BTreeSet<String>) -> InjectionReport {
    let mut groups: BTreeMap<(ElementTag, String), (Option<String>, BTreeSet<String>)> =
        BTreeMap::new();
    for d in diffs {
        for e in &d.added {
            let entry = groups
                .entry((e.element.tag, e.element.locator()))
                .or_insert_with(|| (e.element.host(), BTreeSet::new()));
            entry.1.insert(d.page_url.clone());
        }
    }
    let findings = groups
        .into_iter()
        .filter_map(|((tag, locator), (host, pages))| {
            let recurring = pages.len() >= 2;
            let foreign = host.as_ref().is_some_and(|h| !baseline_hosts.contains(h));
            let reason = match (recurring, foreign) {
                (true, true) => InjectionReason::RecurringFromForeignHost,
                (true, false) => InjectionReason::RecurringAcrossPages,
                (false, true) => InjectionReason::ForeignHost,
                (false, false) => return None,
            };
            Some(InjectionFinding {
                tag,
                locator,
                source_host: host,
                pages: pages.into_iter().collect(),
                reason,
            })
        })
        .collect();
    InjectionReport { findings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::attrs_digest;
    use crate::filter::FilterList;

    fn script(url: &str) -> DomElement {
        DomElement {
            tag: ElementTag::Script,
            url: url.into(),
            attrs_digest: attrs_digest([("src", url)]),
            inline_digest: None,
        }
    }

    fn snap(page: &str, els: Vec<DomElement>) -> DomSnapshot {
        DomSnapshot {
            page_url: page.into(),
            elements: els,
            collected_at: 0,
        }
    }

    const PAGE: &str = "http://news.test/";

    #[test]
    fn identical_snapshots_have_empty_diff() {
        let a = snap(
            PAGE,
            vec![
                script("http://news.test/a.js"),
                script("http://cdn.test/b.js"),
            ],
        );
        assert!(diff(&a, &a, &DynamicAllowlist::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn missing_and_added() {
        let ga = script("https://www.google-analytics.com/ga.js");
        let app = script("http://news.test/app.js");
        let extra = script("http://inject.example/x.js");
        let base = snap(PAGE, vec![app.clone(), ga.clone()]);
        let subj = snap(PAGE, vec![app, extra.clone()]);
        let d = diff(&base, &subj, &DynamicAllowlist::default()).unwrap();
        assert_eq!(d.missing, vec![ga]);
        assert_eq!(d.added, vec![extra]);
    }

    #[test]
    fn tripwire_and_allowlisted_elements_are_ignored() {
        let tw = script("http://collector.gauntlet.invalid/tripwire.js");
        let rot = script("http://ads.news.test/rotating.js?slot=3");
        let base = snap(PAGE, vec![]);
        let subj = snap(PAGE, vec![tw, rot]);
        let allow = DynamicAllowlist::parse(
            "# rotating slot\nhttp://news.test/* http://ads.news.test/rotating.js*\n",
        )
        .unwrap();
        assert!(diff(&base, &subj, &allow).unwrap().is_empty());
    }

    #[test]
    fn attribute_change_is_missing_plus_added() {
        let mut a = script("http://news.test/w.js");
        let mut b = a.clone();
        a.attrs_digest = attrs_digest([("src", "http://news.test/w.js"), ("data-v", "1")]);
        b.attrs_digest = attrs_digest([("src", "http://news.test/w.js"), ("data-v", "2")]);
        let d = diff(
            &snap(PAGE, vec![a.clone()]),
            &snap(PAGE, vec![b.clone()]),
            &DynamicAllowlist::default(),
        )
        .unwrap();
        assert_eq!(d.missing, vec![a]);
        assert_eq!(d.added, vec![b]);
    }

    #[test]
    fn page_mismatch_is_an_error() {
        let r = diff(
            &snap(PAGE, vec![]),
            &snap("http://other.test/", vec![]),
            &DynamicAllowlist::default(),
        );
        assert!(matches!(r, Err(Error::PageMismatch { .. })));
    }

    #[test]
    fn report_parsing() {
        let body = br#"{"page_url":"http://news.test/","elements":[
            {"tag":"script","url":"http://a.test/1.js","attrs_digest":"ab"},
            {"tag":"script","url":"http://a.test/2.js","attrs_digest":"ab"},
            {"tag":"script","url":"http://a.test/3.js","attrs_digest":"ab"},
            {"tag":"link","url":"http://a.test/1.css","attrs_digest":"cd"},
            {"tag":"link","url":"http://a.test/2.css","attrs_digest":"cd","future":1}],
            "ts":17,"extra":{"x":1}}"#;
        let s = parse_tripwire_report(body).unwrap();
        assert_eq!(s.elements.len(), 5);
        assert_eq!(s.collected_at, 17);
        assert!(parse_tripwire_report(&body[..40]).is_err());
        let inline_without_digest = br#"{"page_url":"http://n.test/","elements":[{"tag":"script","url":"","attrs_digest":"ab"}],"ts":1}"#;
        assert!(parse_tripwire_report(inline_without_digest).is_err());
        let bad_tag = br#"{"page_url":"http://n.test/","elements":[{"tag":"img","url":"http://a/","attrs_digest":"ab"}],"ts":1}"#;
        assert!(parse_tripwire_report(bad_tag).is_err());
    }

    #[test]
    fn wire_round_trip() {
        let s = snap(PAGE, vec![script("http://a.test/1.js")]);
        assert_eq!(
            parse_tripwire_report(tripwire_report_json(&s).as_bytes()).unwrap(),
            s
        );
    }

    #[test]
    fn classification() {
        let lists = FilterSet::new(vec![FilterList::parse(
            "easyprivacy",
            "||google-analytics.com/analytics.js\n",
        )]);
        let h = Heuristics::default();
        let (c, hit) = classify_element(
            &script("https://www.google-analytics.com/analytics.js"),
            PAGE,
            &lists,
            &h,
        );
        assert_eq!(c, Classification::TrackerListed);
        assert_eq!(hit.unwrap().rule, "||google-analytics.com/analytics.js");
        let (c, _) = classify_element(
            &script("https://platform.twitter.com/widgets.js"),
            PAGE,
            &lists,
            &h,
        );
        assert_eq!(c, Classification::Widget);
        let inline = DomElement {
            tag: ElementTag::Script,
            url: String::new(),
            attrs_digest: attrs_digest([]),
            inline_digest: Some("00ff".into()),
        };
        assert_eq!(
            classify_element(&inline, PAGE, &lists, &h).0,
            Classification::Other
        );
        assert_eq!(
            classify_element(&script("http://x.test/metrics.js"), PAGE, &lists, &h).0,
            Classification::Analytics
        );
        assert_eq!(
            classify_element(&script("http://x.test/banner.js"), PAGE, &lists, &h).0,
            Classification::Ad
        );
    }

    #[test]
    fn injection_rules() {
        let lists = FilterSet::default();
        let h = Heuristics::default();
        let baseline_hosts: BTreeSet<String> = ["news.test", "cdn.test"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let foreign = script("http://pr.inject.example/i.js");
        let diffs: Vec<DomDiff> = (0..5)
            .map(|i| {
                let page = format!("http://site{i}.test/");
                DomDiff::classify(
                    ElementDiff {
                        page_url: page,
                        missing: vec![],
                        added: vec![foreign.clone()],
                    },
                    &lists,
                    &h,
                )
            })
            .collect();
        let r = detect_injection(&diffs, &baseline_hosts);
        assert_eq!(r.findings.len(), 1);
        assert_eq!(r.findings[0].pages.len(), 5);
        assert_eq!(
            r.findings[0].source_host.as_deref(),
            Some("pr.inject.example")
        );

        // one page, baseline-contacted host: ambiguous, no finding
        let single = DomDiff::classify(
            ElementDiff {
                page_url: PAGE.into(),
                missing: vec![],
                added: vec![script("http://cdn.test/extra.js")],
            },
            &lists,
            &h,
        );
        assert!(detect_injection(&[single], &baseline_hosts)
            .findings
            .is_empty());
    }

    #[test]
    fn globbing() {
        assert!(glob_match("*", "anything"));
        assert!(glob_match("http://a/*.js", "http://a/x/y.js"));
        assert!(!glob_match("http://a/*.js", "http://a/x.css"));
        assert!(glob_match("a*b*c", "a-b-b-c"));
        assert!(!glob_match("ab*ba", "aba"));
    }
}
