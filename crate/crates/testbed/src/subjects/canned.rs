//! Ready-made simulated subjects with known behavior.

use std::collections::BTreeSet;

use gauntlet_core::leak::{Encoding, Location, WEBVIEW_DEFAULT_GRANTS};
use gauntlet_core::profile::PiiType;
use gauntlet_core::subject::{HistorySpec, LeakSpec, MixedContentPolicy, SubjectBehaviorSpec};

pub const ADID_SINK: &str = "http://beacon.adsink.test/v1/launch";
pub const IMEI_SINK: &str = "http://telemetry.devicestat.test/collect";
pub const HISTORY_SINK: &str = "http://sync.browsetrail.test/h";
pub const SUGGEST_ENDPOINT: &str = "http://suggestqueries.google.com/complete/search";

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Behavior of the reference browser that records the baseline: loads
/// everything, blocks mixed content, prompts for location.
pub fn baseline() -> SubjectBehaviorSpec {
    SubjectBehaviorSpec {
        webapi_grants: set(&["accelerometer", "battery", "gyroscope", "magnetometer"]),
        webapi_prompts: set(&["geolocation"]),
        ..SubjectBehaviorSpec::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Canned {
    pub name: &'static str,
    pub package: String,
    pub spec: SubjectBehaviorSpec,
}

fn canned(name: &'static str, spec: SubjectBehaviorSpec) -> Canned {
    Canned {
        name,
        package: format!("org.gauntlet.sim.{}", name.replace(['-', '+'], "_")),
        spec,
    }
}

pub fn clean() -> Canned {
    canned("clean", baseline())
}

pub fn blocker() -> Canned {
    canned(
        "blocker",
        SubjectBehaviorSpec {
            blocks_filterlisted: true,
            webapi_grants: set(&WEBVIEW_DEFAULT_GRANTS),
            ..SubjectBehaviorSpec::default()
        },
    )
}

pub fn allower() -> Canned {
    canned(
        "allower",
        SubjectBehaviorSpec {
            blocks_filterlisted: true,
            exempt_from_blocking: vec!["image".into()],
            ..baseline()
        },
    )
}

pub fn adid_leaker() -> Canned {
    canned(
        "adid-leaker",
        SubjectBehaviorSpec {
            leaks: vec![LeakSpec {
                pii_type: PiiType::Adid,
                encoding: Encoding::Plain,
                destination: ADID_SINK.into(),
                location: Location::Url,
            }],
            ..baseline()
        },
    )
}

pub fn hashed_imei_leaker() -> Canned {
    canned(
        "hashed-imei-leaker",
        SubjectBehaviorSpec {
            leaks: vec![LeakSpec {
                pii_type: PiiType::Imei,
                encoding: Encoding::Md5,
                destination: IMEI_SINK.into(),
                location: Location::Body,
            }],
            ..baseline()
        },
    )
}

pub fn history_sharer_with_feature() -> Canned {
    canned(
        "history-sharer-with-feature",
        SubjectBehaviorSpec {
            sends_history_to: Some(HistorySpec {
                destination: SUGGEST_ENDPOINT.into(),
                fraction: 1.0,
            }),
            ..baseline()
        },
    )
}

pub fn history_sharer_with_pii() -> Canned {
    canned(
        "history-sharer-with-pii",
        SubjectBehaviorSpec {
            sends_history_to: Some(HistorySpec {
                destination: HISTORY_SINK.into(),
                fraction: 0.75,
            }),
            leaks: vec![LeakSpec {
                pii_type: PiiType::Adid,
                encoding: Encoding::Plain,
                destination: HISTORY_SINK.into(),
                location: Location::Header,
            }],
            ..baseline()
        },
    )
}

pub fn cert_acceptor_http_default() -> Canned {
    canned(
        "cert-acceptor+http-default",
        SubjectBehaviorSpec {
            accepts_bad_cert: true,
            default_scheme: gauntlet_core::subject::Scheme::Http,
            ..baseline()
        },
    )
}

/// The eight verdict-fidelity subjects, in a fixed order.
pub fn verdict_suite() -> Vec<Canned> {
    vec![
        clean(),
        blocker(),
        allower(),
        adid_leaker(),
        hashed_imei_leaker(),
        history_sharer_with_feature(),
        history_sharer_with_pii(),
        cert_acceptor_http_default(),
    ]
}

/// One subject per mixed-content policy.
pub fn mixed_content_suite() -> Vec<Canned> {
    [
        ("mixed-allow", MixedContentPolicy::Allow),
        ("mixed-upgrade", MixedContentPolicy::Upgrade),
        ("mixed-block", MixedContentPolicy::Block),
    ]
    .into_iter()
    .map(|(name, mixed_content)| {
        canned(
            name,
            SubjectBehaviorSpec {
                mixed_content,
                ..baseline()
            },
        )
    })
    .collect()
}

pub fn by_name(name: &str) -> Option<Canned> {
    verdict_suite()
        .into_iter()
        .chain(mixed_content_suite())
        .find(|c| c.name == name)
}
