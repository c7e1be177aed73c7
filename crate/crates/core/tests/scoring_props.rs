//! Privacy-score monotonicity, weight-scale invariance and identifier bridging.

use std::collections::{BTreeMap, BTreeSet};

use gauntlet_core::connsec::{CertValidation, ConnSecReport, DefaultProtocol, MixedContent};
use gauntlet_core::dom::{Classification, DomDiffSummary};
use gauntlet_core::leak::{
    detect_id_bridging, AllowedTrackingReport, Encoding, Feature, HistoryFinding, Location, Party,
    PiiFinding, WebApiExposure, PROBED_APIS,
};
use gauntlet_core::profile::PiiType;
use gauntlet_core::score::{
    pii_exposure, rank, score_subject, FindingsBundle, ScoreConfig, TierWeights,
};
use proptest::prelude::*;

const DEST_HOSTS: [&str; 4] = ["a.sink.test", "b.sink.test", "c.other.test", "d.other.test"];

fn finding(t: PiiType, host: usize, flow: usize) -> PiiFinding {
    PiiFinding {
        pii_type: t,
        resettable: t.is_resettable(),
        encoding: Encoding::Plain,
        location: Location::Url,
        destination_host: DEST_HOSTS[host].to_string(),
        destination_org: None,
        flow_id: format!("f{flow}"),
        party: Party::Third,
    }
}

fn history(feature: Feature) -> HistoryFinding {
    HistoryFinding {
        destination_host: "h.test".into(),
        destination_org: None,
        visited_sites_exposed: BTreeSet::new(),
        exposure_fraction: 0.75,
        co_sent_pii: BTreeSet::new(),
        feature,
        flow_ids: vec![],
    }
}

/// Switches describing one synthetic bundle.
#[derive(Debug, Clone)]
struct Knobs {
    tracker_missing: usize,
    allows_tracking: bool,
    https: bool,
    cert_accepted: bool,
    granted: BTreeSet<String>,
    prompted: BTreeSet<String>,
    pii: Vec<(PiiType, usize)>,
    history: Vec<Feature>,
}

fn pii_type() -> impl Strategy<Value = PiiType> {
    prop::sample::select(PiiType::ALL.to_vec())
}

fn feature() -> impl Strategy<Value = Feature> {
    prop::sample::select(vec![
        Feature::None,
        Feature::SearchSuggest,
        Feature::SafetyCheck,
        Feature::Favicon,
    ])
}

fn api_set() -> impl Strategy<Value = BTreeSet<String>> {
    prop::collection::btree_set(
        prop::sample::select(PROBED_APIS.to_vec()).prop_map(str::to_string),
        0..4,
    )
}

fn knobs() -> impl Strategy<Value = Knobs> {
    (
        0usize..3,
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
        api_set(),
        prop_oneof![3 => Just(BTreeSet::new()), 1 => api_set()],
        prop::collection::vec((pii_type(), 0usize..4), 0..8),
        prop::collection::vec(feature(), 0..3),
    )
        .prop_map(
            |(
                tracker_missing,
                allows_tracking,
                https,
                cert_accepted,
                granted,
                prompted,
                pii,
                history,
            )| Knobs {
                tracker_missing,
                allows_tracking,
                https,
                cert_accepted,
                granted,
                prompted,
                pii,
                history,
            },
        )
}

fn bundle(k: &Knobs) -> FindingsBundle {
    let mut dom = DomDiffSummary {
        tracker_listed_missing: k.tracker_missing,
        ..Default::default()
    };
    if k.tracker_missing > 0 {
        dom.missing_by_class
            .insert(Classification::TrackerListed, k.tracker_missing);
    }
    let allowed = AllowedTrackingReport {
        allows_tracking: k.allows_tracking,
        ..Default::default()
    };
    FindingsBundle {
        dom: Some(dom),
        allowed_tracking: Some(allowed),
        connsec: Some(ConnSecReport {
            default_protocol: if k.https {
                DefaultProtocol::Https
            } else {
                DefaultProtocol::Http
            },
            cert_validation: if k.cert_accepted {
                CertValidation::Accepted
            } else {
                CertValidation::Rejected
            },
            mixed_content: MixedContent::Blocked,
            mixed_content_resources: BTreeMap::new(),
            rc4_offered: false,
            doh_dot_observed: false,
            ocsp_observed: false,
        }),
        pii: Some(
            k.pii
                .iter()
                .enumerate()
                .map(|(i, &(t, h))| finding(t, h, i))
                .collect(),
        ),
        history: Some(k.history.iter().map(|f| history(*f)).collect()),
        webapi: Some(WebApiExposure {
            known: true,
            granted: k.granted.clone(),
            prompted: k.prompted.clone(),
            webview_default: false,
            prompt_signature: !k.prompted.is_empty(),
            fully_blocking: k.granted.is_empty() && k.prompted.is_empty(),
        }),
    }
}

fn key(k: &Knobs, cfg: &ScoreConfig) -> f64 {
    score_subject("s", &bundle(k), cfg).rank_key
}

/// Each single step makes the subject strictly no better.
fn worsen(k: &Knobs, step: u8, t: PiiType, host: usize, api: &str) -> Knobs {
    let mut w = k.clone();
    match step {
        0 => w.tracker_missing = 0,
        1 => w.allows_tracking = true,
        2 => w.https = false,
        3 => w.cert_accepted = true,
        4 => {
            w.granted.insert(api.to_string());
        }
        5 => {
            w.prompted.insert(api.to_string());
        }
        6 => w.pii.push((t, host)),
        _ => w.history.push(Feature::None),
    }
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_500))]

    #[test]
    fn worsening_never_lowers_rank_key(
        k in knobs(),
        step in 0u8..8,
        t in pii_type(),
        host in 0usize..4,
        api in prop::sample::select(PROBED_APIS.to_vec()),
    ) {
        let cfg = ScoreConfig::default();
        let before = score_subject("s", &bundle(&k), &cfg);
        let after = score_subject("s", &bundle(&worsen(&k, step, t, host, api)), &cfg);
        prop_assert!(after.rank_key >= before.rank_key, "step {}: {} -> {}", step, before.rank_key, after.rank_key);
        prop_assert!(after.harm_total >= before.harm_total);
        prop_assert!(after.protective_total <= before.protective_total);
        prop_assert!((0.0..=1.0).contains(&after.harmful.pii_exposure));
    }

    #[test]
    fn pii_exposure_is_monotone_in_the_type_set(
        a in prop::collection::vec((pii_type(), 0usize..4), 0..10),
        extra in prop::collection::vec((pii_type(), 0usize..4), 0..6),
    ) {
        let w = TierWeights::default();
        let small: Vec<PiiFinding> = a.iter().enumerate().map(|(i, &(t, h))| finding(t, h, i)).collect();
        let mut big = small.clone();
        big.extend(extra.iter().enumerate().map(|(i, &(t, h))| finding(t, h, 100 + i)));
        prop_assert!(pii_exposure(&big, &w) >= pii_exposure(&small, &w));
        // duplicates and reordering change nothing
        let mut dup = small.clone();
        dup.extend(small.iter().cloned());
        dup.reverse();
        prop_assert_eq!(pii_exposure(&dup, &w), pii_exposure(&small, &w));
        // naive recount
        let types: BTreeSet<PiiType> = a.iter().map(|(t, _)| *t).collect();
        let naive: f64 = types.iter().map(|t| match t {
            PiiType::AndroidId | PiiType::Imei | PiiType::Mac => 1.0,
            PiiType::Adid => 0.5,
            _ => 0.25,
        }).sum::<f64>() / 4.0;
        prop_assert!((pii_exposure(&small, &w) - naive.min(1.0)).abs() < 1e-12);
    }

    #[test]
    fn ranking_is_invariant_under_weight_scaling(
        subjects in prop::collection::vec(knobs(), 2..12),
        c in prop_oneof![0.001f64..1.0, 1.0f64..1000.0],
    ) {
        let base = ScoreConfig::default();
        let scaled = ScoreConfig { weights: base.weights.scaled(c), ..base };
        let ids = |cfg: &ScoreConfig| -> Vec<String> {
            let scores: Vec<_> = subjects
                .iter()
                .enumerate()
                .map(|(i, k)| score_subject(&format!("s{i:02}"), &bundle(k), cfg))
                .collect();
            rank(&scores).into_iter().map(|s| s.subject_id).collect()
        };
        prop_assert_eq!(ids(&base), ids(&scaled));
        for k in &subjects {
            prop_assert!((key(k, &base) - key(k, &scaled)).abs() < 1e-9);
        }
    }

    #[test]
    fn bridging_fires_exactly_on_per_host_cooccurrence(
        pii in prop::collection::vec((pii_type(), 0usize..4), 0..14),
    ) {
        let findings: Vec<PiiFinding> = pii.iter().enumerate().map(|(i, &(t, h))| finding(t, h, i)).collect();
        let reports = detect_id_bridging(&findings);
        let fired: BTreeSet<String> = reports.iter().map(|r| r.destination_host.clone()).collect();
        let mut expect = BTreeSet::new();
        for (h, host) in DEST_HOSTS.iter().enumerate() {
            let at: Vec<PiiType> = pii.iter().filter(|(_, x)| *x == h).map(|(t, _)| *t).collect();
            let resettable = at.contains(&PiiType::Adid);
            let hard = at.iter().any(|t| matches!(t, PiiType::AndroidId | PiiType::Imei | PiiType::Mac));
            if resettable && hard {
                expect.insert(host.to_string());
            }
        }
        prop_assert_eq!(&fired, &expect);
        for r in &reports {
            prop_assert!(r.resettable.iter().all(|t| t.is_resettable()));
            prop_assert!(r.non_resettable.iter().all(|t| matches!(t, PiiType::AndroidId | PiiType::Imei | PiiType::Mac)));
        }
    }
}

#[test]
fn rank_is_a_total_deterministic_order() {
    let cfg = ScoreConfig::default();
    let empty = Knobs {
        tracker_missing: 0,
        allows_tracking: false,
        https: false,
        cert_accepted: false,
        granted: BTreeSet::new(),
        prompted: BTreeSet::new(),
        pii: vec![],
        history: vec![],
    };
    let scores: Vec<_> = ["c", "a", "b"]
        .iter()
        .map(|id| score_subject(id, &bundle(&empty), &cfg))
        .collect();
    let ids: Vec<String> = rank(&scores).into_iter().map(|s| s.subject_id).collect();
    assert_eq!(ids, ["a", "b", "c"]);
}
