//! Browsing-history exposure counting and thresholds.

use std::collections::BTreeSet;
use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::OnceLock;

use gauntlet_core::flow::CapturedFlow;
use gauntlet_core::leak::{
    detect_history_exposure, Feature, FeatureRegistry, HistoryContext, HistoryFinding, OrgMap,
    PiiScanner, VisitedPage,
};
use gauntlet_core::profile::{DeviceProfile, GeoPoint, PiiType};
use proptest::prelude::*;

/// Sixteen visited hosts; several are label-suffixes of others.
const HOSTS: [&str; 16] = [
    "news.test",
    "bignews.test",
    "shop.test",
    "myshop.test",
    "mail.test",
    "webmail.test",
    "video.test",
    "bank.test",
    "travel.test",
    "weather.test",
    "sports.test",
    "recipes.test",
    "maps.test",
    "music.test",
    "games.test",
    "forum.test",
];

fn profile() -> DeviceProfile {
    DeviceProfile {
        adid: "38400000-8cf0-11bd-b23e-10b96e40000d".into(),
        android_id: "9774d56d682e549c".into(),
        imei: "490154203237518".into(),
        mac_device: "02:00:5e:10:00:01".into(),
        mac_wifi: "02:00:5e:10:00:02".into(),
        geolocation: GeoPoint {
            lat: 40.7128,
            lon: -74.006,
        },
        installed_apps: vec!["com.example.bank".into(), "com.example.chat".into()],
    }
}

fn page_url(host: &str) -> String {
    format!("http://{host}/")
}

fn visited() -> Vec<VisitedPage> {
    let urls: Vec<String> = HOSTS.iter().map(|h| page_url(h)).collect();
    VisitedPage::from_urls(urls.iter().map(String::as_str))
}

fn sha256_external(s: &str) -> String {
    let mut child = Command::new("/usr/bin/sha256sum")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(s.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    String::from_utf8(out.stdout)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .to_string()
}

fn url_hashes() -> &'static Vec<String> {
    static H: OnceLock<Vec<String>> = OnceLock::new();
    H.get_or_init(|| {
        HOSTS
            .iter()
            .map(|h| sha256_external(&page_url(h)))
            .collect()
    })
}

#[derive(Debug, Clone, Copy)]
enum Form {
    Host,
    Url,
    Encoded,
    Hashed,
}

fn leak_flow(dest: &str, seq: usize, host_idx: usize, form: Form, extra: &str) -> CapturedFlow {
    let host = HOSTS[host_idx];
    let v = match form {
        Form::Host => host.to_string(),
        Form::Url => page_url(host),
        Form::Encoded => page_url(host).replace(':', "%3A").replace('/', "%2F"),
        Form::Hashed => url_hashes()[host_idx].clone(),
    };
    let mut f = CapturedFlow::new(
        &format!("h-{seq:04}"),
        "s",
        "GET",
        &format!("https://{dest}/log?u={v}{extra}"),
    );
    f.ts_start = seq as u64;
    f
}

fn detect(flows: &[CapturedFlow], threshold: f64) -> Vec<HistoryFinding> {
    let visited = visited();
    let baseline = BTreeSet::from(["baseline.noise.test".to_string()]);
    let scanner = PiiScanner::new(&profile()).with_orgs(OrgMap::bundled());
    let registry = FeatureRegistry::bundled();
    detect_history_exposure(
        flows,
        &HistoryContext {
            visited: &visited,
            baseline_hosts: &baseline,
            scanner: &scanner,
            registry: &registry,
            threshold,
        },
    )
}

fn plant(dest: &str, indices: &[usize], form: Form) -> Vec<CapturedFlow> {
    indices
        .iter()
        .enumerate()
        .map(|(i, &h)| leak_flow(dest, i, h, form, ""))
        .collect()
}

#[test]
fn nine_of_sixteen_crosses_half() {
    for form in [Form::Host, Form::Url, Form::Encoded, Form::Hashed] {
        let idx: Vec<usize> = (0..9).collect();
        let found = detect(&plant("sink.history.test", &idx, form), 0.5);
        assert_eq!(found.len(), 1, "{form:?}: {found:?}");
        let f = &found[0];
        assert_eq!(f.exposure_fraction, 9.0 / 16.0);
        assert_eq!(f.exposure_fraction, 0.5625);
        assert_eq!(f.destination_host, "sink.history.test");
        let expect: BTreeSet<String> = HOSTS[..9].iter().map(|h| h.to_string()).collect();
        assert_eq!(f.visited_sites_exposed, expect, "{form:?}");
        assert_eq!(f.feature, Feature::None);
        assert!(f.co_sent_pii.is_empty());
        assert_eq!(f.flow_ids.len(), 9);
    }
}

#[test]
fn eight_of_sixteen_does_not() {
    for form in [Form::Host, Form::Url, Form::Encoded, Form::Hashed] {
        let idx: Vec<usize> = (0..8).collect();
        assert!(
            detect(&plant("sink.history.test", &idx, form), 0.5).is_empty(),
            "{form:?}"
        );
    }
}

#[test]
fn label_suffix_hosts_are_not_double_counted() {
    // bignews, myshop and webmail embed news, shop and mail as substrings
    let idx = [1, 3, 5, 6, 7, 8, 9, 10, 11];
    let found = detect(&plant("sink.history.test", &idx, Form::Host), 0.5);
    assert_eq!(found.len(), 1);
    let exposed = &found[0].visited_sites_exposed;
    assert_eq!(exposed.len(), 9);
    for h in ["news.test", "shop.test", "mail.test"] {
        assert!(!exposed.contains(h), "{h} falsely exposed");
    }
}

#[test]
fn co_sent_identifiers_and_features() {
    let idx: Vec<usize> = (0..12).collect();
    let mut flows: Vec<CapturedFlow> = idx
        .iter()
        .map(|&h| {
            leak_flow(
                "sink.history.test",
                h,
                h,
                Form::Url,
                "&aid=38400000-8cf0-11bd-b23e-10b96e40000d",
            )
        })
        .collect();
    flows.extend(idx.iter().map(|&h| {
        leak_flow(
            "suggestqueries.google.com",
            100 + h,
            h,
            Form::Host,
            "&client=chrome",
        )
    }));
    // excluded destinations: baseline host, a visited site's subdomain, the collector
    for dest in [
        "baseline.noise.test",
        "cdn.news.test",
        "collector.gauntlet.invalid",
    ] {
        flows.extend(
            idx.iter()
                .map(|&h| leak_flow(dest, 200 + h, h, Form::Host, "")),
        );
    }
    let found = detect(&flows, 0.5);
    assert_eq!(found.len(), 2, "{found:?}");
    let sink = found
        .iter()
        .find(|f| f.destination_host == "sink.history.test")
        .unwrap();
    assert_eq!(sink.co_sent_pii, BTreeSet::from([PiiType::Adid]));
    assert_eq!(sink.feature, Feature::None);
    let suggest = found
        .iter()
        .find(|f| f.destination_host == "suggestqueries.google.com")
        .unwrap();
    assert_eq!(suggest.feature, Feature::SearchSuggest);
    assert_eq!(suggest.destination_org.as_deref(), Some("Google"));
    assert_eq!(suggest.exposure_fraction, 0.75);
}

fn form_strategy() -> impl Strategy<Value = Form> {
    prop_oneof![
        Just(Form::Host),
        Just(Form::Url),
        Just(Form::Encoded),
        Just(Form::Hashed)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fraction_matches_recount(
        picks in proptest::collection::vec((0usize..16, form_strategy()), 0..40),
        threshold in prop_oneof![Just(0.25), Just(0.5), Just(0.75), 0.0f64..1.0],
    ) {
        let flows: Vec<CapturedFlow> = picks
            .iter()
            .enumerate()
            .map(|(i, &(h, form))| leak_flow("sink.history.test", i, h, form, ""))
            .collect();
        let planted: BTreeSet<String> = picks.iter().map(|&(h, _)| HOSTS[h].to_string()).collect();
        let fraction = planted.len() as f64 / 16.0;
        let found = detect(&flows, threshold);
        if fraction > threshold {
            prop_assert_eq!(found.len(), 1);
            prop_assert_eq!(found[0].exposure_fraction, fraction);
            prop_assert_eq!(&found[0].visited_sites_exposed, &planted);
        } else {
            prop_assert!(found.is_empty());
        }
    }
}
