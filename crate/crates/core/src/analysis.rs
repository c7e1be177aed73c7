//! Offline analysis of one subject archive against its baseline archive.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::archive::{
    latest_by_page, Archive, ArchiveManifest, Compatibility, SessionKind, SCHEMA_VERSION,
};
use crate::connsec::{assess, ConnSecReport, ConnSecTargets, EndpointRegistry};
use crate::dom::{detect_injection, diff, DomDiff, DomDiffSummary, Heuristics, InjectionReport};
use crate::filter::FilterSet;
use crate::flow::CapturedFlow;
use crate::leak::{
    attribute_engine, build_attribution, classify_webapi_exposure, detect_allowed_tracking,
    detect_history_exposure, detect_id_bridging, org_bridging_annex, subtract_baseline,
    AllowedTrackingReport, BridgingReport, EngineAttribution, FeatureRegistry, HistoryContext,
    HistoryFinding, OrgBridgingNote, OrgMap, PiiFinding, PiiScanner, VisitedPage, WebApiExposure,
};
use crate::score::{score_subject, FindingsBundle, PrivacyScore, ScoreConfig};
use crate::subject::Subject;
use crate::{Error, Result};

/// Tables and thresholds used by the analysis.
#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub lists: FilterSet,
    pub heuristics: Heuristics,
    pub orgs: OrgMap,
    pub features: FeatureRegistry,
    pub endpoints: EndpointRegistry,
    pub history_threshold: f64,
    pub score: ScoreConfig,
}

impl AnalysisConfig {
    pub fn bundled() -> Self {
        AnalysisConfig {
            lists: FilterSet::bundled(),
            heuristics: Heuristics::default(),
            orgs: OrgMap::bundled(),
            features: FeatureRegistry::bundled(),
            endpoints: EndpointRegistry::default(),
            history_threshold: 0.5,
            score: ScoreConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomSection {
    pub diffs: Vec<DomDiff>,
    pub summary: DomDiffSummary,
    pub pages_without_snapshot: Vec<String>,
    pub injection: InjectionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiiSection {
    pub findings: Vec<PiiFinding>,
    pub removed_by_baseline: usize,
    pub bridging: Vec<BridgingReport>,
    pub org_bridging_annex: Vec<OrgBridgingNote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectReport {
    pub schema_version: u32,
    pub subject: Subject,
    pub compatibility: Option<Compatibility>,
    pub engine: EngineAttribution,
    pub dom: Option<DomSection>,
    pub allowed_tracking: Option<AllowedTrackingReport>,
    pub pii: PiiSection,
    pub history: Vec<HistoryFinding>,
    pub history_threshold: f64,
    pub webapi: Option<WebApiExposure>,
    pub connsec: Option<ConnSecReport>,
    pub score: PrivacyScore,
    pub load_failures: Vec<String>,
    pub filter_lists: BTreeMap<String, Option<String>>,
    pub cache_epoch: Option<String>,
}

fn flows_of(
    archive: &Archive,
    m: &ArchiveManifest,
    kinds: &[SessionKind],
) -> Result<Vec<CapturedFlow>> {
    let mut out = Vec::new();
    for s in m.sessions.iter().filter(|s| kinds.contains(&s.kind)) {
        out.extend(archive.read_flows(&s.id)?);
    }
    Ok(out)
}

fn host_of(url: &str) -> Option<String> {
    url::Url::parse(url)
        .ok()
        .and_then(|u| u.host_str().map(str::to_ascii_lowercase))
}

/// Runs every analysis over the archive. Components that depend on the
/// page battery are omitted for incompatible subjects.
pub fn analyze(
    subject: &Archive,
    baseline: &Archive,
    cfg: &AnalysisConfig,
) -> Result<SubjectReport> {
    let m = subject.read_manifest()?;
    let bm = baseline.read_manifest()?;
    let profile = subject.read_profile()?;
    let baseline_profile = baseline.read_profile()?;
    let targets = &m.targets;
    let compatible = m.compatibility != Some(Compatibility::Incompatible);

    let main = flows_of(subject, &m, &[SessionKind::Main])?;
    let untrusted = flows_of(subject, &m, &[SessionKind::UntrustedCa])?;
    let all = flows_of(
        subject,
        &m,
        &[
            SessionKind::Compatibility,
            SessionKind::Main,
            SessionKind::UntrustedCa,
        ],
    )?;
    let base_flows = flows_of(baseline, &bm, &[SessionKind::Baseline, SessionKind::Main])?;
    let baseline_hosts: BTreeSet<String> = base_flows.iter().filter_map(|f| f.host()).collect();
    info!(subject = %m.subject.subject_id, flows = all.len(), baseline_flows = base_flows.len(), "analyzing");

    let scanner = PiiScanner::new(&profile)
        .with_developer_domain(m.subject.declared_developer_domain.as_deref())
        .with_orgs(cfg.orgs.clone());
    let base_scanner = PiiScanner::new(&baseline_profile).with_orgs(cfg.orgs.clone());
    let raw_pii = scanner.scan_all(&all);
    let base_pii = base_scanner.scan_all(&base_flows);
    let findings = subtract_baseline(&raw_pii, &base_pii);
    let pii = PiiSection {
        removed_by_baseline: raw_pii.len() - findings.len(),
        bridging: detect_id_bridging(&findings),
        org_bridging_annex: org_bridging_annex(&findings),
        findings,
    };

    let visited = VisitedPage::from_urls(targets.root_urls().iter().map(String::as_str));
    let history = detect_history_exposure(
        &all,
        &HistoryContext {
            visited: &visited,
            baseline_hosts: &baseline_hosts,
            scanner: &scanner,
            registry: &cfg.features,
            threshold: cfg.history_threshold,
        },
    );

    let load_failures: Vec<String> = m
        .sessions
        .iter()
        .flat_map(|s| s.load_failures.iter().cloned())
        .collect();

    let (dom, allowed_tracking, webapi, connsec, engine) = if compatible {
        let dom = dom_section(subject, &m, baseline, &bm, &baseline_hosts, cfg)?;
        let graph = build_attribution(&main, &targets.root_urls());
        let allowed = detect_allowed_tracking(&main, &graph, &cfg.lists);
        let mut probes = Vec::new();
        for s in m.sessions_of(SessionKind::Main) {
            probes.extend(subject.read_probes(&s.id)?);
        }
        let probe = probes
            .iter()
            .filter(|p| p.page_url == targets.permissions_page)
            .max_by_key(|p| p.ts);
        let webapi = classify_webapi_exposure(probe);
        let connsec = assess(
            &main,
            &untrusted,
            &ConnSecTargets {
                bare_host: targets.bare_host.clone(),
                https_page: targets.https_page.clone(),
                mixed_page: targets.mixed_page.clone(),
                mixed_insecure: targets.mixed_insecure.clone(),
            },
            &cfg.endpoints,
        );
        let test_hosts: BTreeSet<String> = targets
            .root_urls()
            .iter()
            .filter_map(|u| host_of(u))
            .collect();
        let engine = attribute_engine(
            main.iter()
                .filter(|f| f.host().is_some_and(|h| test_hosts.contains(&h))),
            &m.subject.package_name,
        );
        (
            Some(dom),
            Some(allowed),
            Some(webapi),
            Some(connsec),
            engine,
        )
    } else {
        warn!(subject = %m.subject.subject_id, "incompatible subject, launch-time traffic only");
        (None, None, None, None, EngineAttribution::Unknown)
    };

    let bundle = FindingsBundle {
        dom: dom.as_ref().map(|d| d.summary.clone()),
        allowed_tracking: allowed_tracking.clone(),
        connsec: connsec.clone(),
        pii: Some(pii.findings.clone()),
        history: Some(history.clone()),
        webapi: webapi.clone(),
    };
    let score = score_subject(&m.subject.subject_id, &bundle, &cfg.score);

    Ok(SubjectReport {
        schema_version: SCHEMA_VERSION,
        subject: m.subject.clone(),
        compatibility: m.compatibility,
        engine,
        dom,
        allowed_tracking,
        pii,
        history,
        history_threshold: cfg.history_threshold,
        webapi,
        connsec,
        score,
        load_failures,
        filter_lists: cfg.lists.versions(),
        cache_epoch: m.cache_epoch.clone(),
    })
}

fn dom_section(
    subject: &Archive,
    m: &ArchiveManifest,
    baseline: &Archive,
    bm: &ArchiveManifest,
    baseline_hosts: &BTreeSet<String>,
    cfg: &AnalysisConfig,
) -> Result<DomSection> {
    let mut subj_snaps = Vec::new();
    for s in m.sessions_of(SessionKind::Main) {
        subj_snaps.extend(subject.read_snapshots(&s.id)?);
    }
    let mut base_snaps = Vec::new();
    for s in bm
        .sessions
        .iter()
        .filter(|s| matches!(s.kind, SessionKind::Baseline | SessionKind::Main))
    {
        base_snaps.extend(baseline.read_snapshots(&s.id)?);
    }
    let subj = latest_by_page(subj_snaps);
    let base = latest_by_page(base_snaps);
    let allowlist = baseline.read_allowlist()?;
    let mut diffs = Vec::new();
    let mut pages_without_snapshot = Vec::new();
    for page in m.targets.dom_pages() {
        match (base.get(&page), subj.get(&page)) {
            (Some(b), Some(s)) => diffs.push(DomDiff::classify(
                diff(b, s, &allowlist)?,
                &cfg.lists,
                &cfg.heuristics,
            )),
            (None, _) => {
                return Err(Error::invalid(
                    "baseline",
                    format!("no baseline snapshot for {page}"),
                ));
            }
            (Some(_), None) => pages_without_snapshot.push(page),
        }
    }
    Ok(DomSection {
        summary: DomDiffSummary::from_diffs(&diffs),
        injection: detect_injection(&diffs, baseline_hosts),
        diffs,
        pages_without_snapshot,
    })
}

/// Analyzes and writes `report.json` into the subject archive.
pub fn analyze_and_write(subject: &Archive, cfg: &AnalysisConfig) -> Result<SubjectReport> {
    let m = subject.read_manifest()?;
    let baseline = subject.baseline(&m)?;
    let report = analyze(subject, &baseline, cfg)?;
    subject.write_json("report.json", &report)?;
    Ok(report)
}
