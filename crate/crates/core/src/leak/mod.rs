//! Exfiltration analysis over captured flows: identifiers, browsing history,
//! referer attribution, allowed tracker requests, engine and WebAPI exposure.

mod attribution;
mod engine;
mod history;
mod orgs;
mod pii;
mod webapi;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use attribution::{build_attribution, node_key, reveal_owners, AttributionGraph, Edge};
pub use engine::{attribute_engine, EngineAttribution};
pub use history::{
    contains_host, detect_history_exposure, exposes, request_text, Feature, FeatureRegistry,
    HistoryContext, HistoryFinding, VisitedPage,
};
pub use orgs::OrgMap;
pub use pii::{
    geo_digest_input, planted_value, scan_flow_for_pii, Encoding, Location, Party, PiiFinding,
    PiiScanner,
};
pub use webapi::{
    classify_webapi_exposure, parse_probe_report, ProbeReport, ProbeState, WebApiExposure,
    PROBED_APIS, WEBVIEW_DEFAULT_GRANTS,
};

use crate::filter::{FilterSet, RequestContext, ResourceType, RuleHit, SetVerdict};
use crate::flow::CapturedFlow;
use crate::profile::PiiType;
use crate::COLLECTOR_HOST;

/// Drops findings whose (pii_type, destination_host) also occurs in the baseline.
pub fn subtract_baseline(findings: &[PiiFinding], baseline: &[PiiFinding]) -> Vec<PiiFinding> {
    let seen: BTreeSet<(PiiType, &str)> = baseline
        .iter()
        .map(|f| (f.pii_type, f.destination_host.as_str()))
        .collect();
    findings
        .iter()
        .filter(|f| !seen.contains(&(f.pii_type, f.destination_host.as_str())))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgingReport {
    pub destination_host: String,
    pub destination_org: Option<String>,
    pub resettable: BTreeSet<PiiType>,
    pub non_resettable: BTreeSet<PiiType>,
    pub flow_ids: BTreeSet<String>,
}

/// Organization-level co-occurrence with no single host receiving both kinds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrgBridgingNote {
    pub organization: String,
    pub hosts: BTreeSet<String>,
    pub resettable: BTreeSet<PiiType>,
    pub non_resettable: BTreeSet<PiiType>,
}

#[derive(Default)]
struct Split {
    resettable: BTreeSet<PiiType>,
    non_resettable: BTreeSet<PiiType>,
    flows: BTreeSet<String>,
    hosts: BTreeSet<String>,
    org: Option<String>,
}

fn is_identifier(t: PiiType) -> bool {
    matches!(
        t,
        PiiType::Adid | PiiType::AndroidId | PiiType::Imei | PiiType::Mac
    )
}

fn split_by<F: Fn(&PiiFinding) -> Option<String>>(
    findings: &[PiiFinding],
    key: F,
) -> BTreeMap<String, Split> {
    let mut out: BTreeMap<String, Split> = BTreeMap::new();
    for f in findings.iter().filter(|f| is_identifier(f.pii_type)) {
        let Some(k) = key(f) else { continue };
        let s = out.entry(k).or_default();
        if f.resettable {
            s.resettable.insert(f.pii_type);
        } else {
            s.non_resettable.insert(f.pii_type);
        }
        s.flows.insert(f.flow_id.clone());
        s.hosts.insert(f.destination_host.clone());
        s.org = s.org.take().or_else(|| f.destination_org.clone());
    }
    out
}

/// One report per host that received a resettable and a non-resettable identifier.
pub fn detect_id_bridging(findings: &[PiiFinding]) -> Vec<BridgingReport> {
    split_by(findings, |f| Some(f.destination_host.clone()))
        .into_iter()
        .filter(|(_, s)| !s.resettable.is_empty() && !s.non_resettable.is_empty())
        .map(|(host, s)| BridgingReport {
            destination_host: host,
            destination_org: s.org,
            resettable: s.resettable,
            non_resettable: s.non_resettable,
            flow_ids: s.flows,
        })
        .collect()
}

/// Organizations that collectively receive both identifier kinds across
/// hosts that are not themselves bridging.
pub fn org_bridging_annex(findings: &[PiiFinding]) -> Vec<OrgBridgingNote> {
    let bridged: BTreeSet<String> = detect_id_bridging(findings)
        .into_iter()
        .map(|b| b.destination_host)
        .collect();
    split_by(findings, |f| f.destination_org.clone())
        .into_iter()
        .filter(|(_, s)| {
            !s.resettable.is_empty()
                && !s.non_resettable.is_empty()
                && s.hosts.iter().all(|h| !bridged.contains(h))
        })
        .map(|(org, s)| OrgBridgingNote {
            organization: org,
            hosts: s.hosts,
            resettable: s.resettable,
            non_resettable: s.non_resettable,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedRequest {
    pub flow_id: String,
    pub url: String,
    pub page: Option<String>,
    pub hit: RuleHit,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllowedTrackingReport {
    pub evaluated: usize,
    pub blocked_verdicts: Vec<MatchedRequest>,
    pub exempted: usize,
    /// Filter-listed requests with no chain to a test page.
    pub unattributed_matches: Vec<MatchedRequest>,
    pub allows_tracking: bool,
}

fn resource_type(flow: &CapturedFlow) -> ResourceType {
    ResourceType::infer(flow.request_headers.get("sec-fetch-dest"), &flow.url)
}

/// Evaluates every issued request against the lists with its attributed
/// page as context.
pub fn detect_allowed_tracking(
    flows: &[CapturedFlow],
    graph: &AttributionGraph,
    lists: &FilterSet,
) -> AllowedTrackingReport {
    let mut report = AllowedTrackingReport::default();
    for f in flows {
        if !f.intercepted || f.host().as_deref() == Some(COLLECTOR_HOST) {
            continue;
        }
        let page = graph.root_of(&f.flow_id);
        let rt = resource_type(f);
        let context_page = page.unwrap_or(f.url.as_str());
        let Ok(ctx) = RequestContext::new(&f.url, context_page, rt) else {
            continue;
        };
        if page.is_some() {
            report.evaluated += 1;
        }
        match lists.matches(&ctx) {
            SetVerdict::Blocked(hit) => {
                let m = MatchedRequest {
                    flow_id: f.flow_id.clone(),
                    url: f.url.clone(),
                    page: page.map(str::to_string),
                    hit,
                };
                if page.is_some() {
                    report.blocked_verdicts.push(m);
                } else {
                    report.unattributed_matches.push(m);
                }
            }
            SetVerdict::Exempted(_) if page.is_some() => report.exempted += 1,
            _ => {}
        }
    }
    report.allows_tracking = !report.blocked_verdicts.is_empty();
    report
}
