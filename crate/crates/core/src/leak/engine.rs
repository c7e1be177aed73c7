use serde::{Deserialize, Serialize};

use crate::flow::CapturedFlow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineAttribution {
    Webview,
    Other,
    Unknown,
}

/// Runtime engine from `X-Requested-With` on test-page requests: WebView
/// clients stamp every request with the embedding package name.
pub fn attribute_engine<'a>(
    test_flows: impl IntoIterator<Item = &'a CapturedFlow>,
    package_name: &str,
) -> EngineAttribution {
    let (mut with, mut without) = (0usize, 0usize);
    for f in test_flows {
        if !f.intercepted {
            continue;
        }
        if f.request_headers.get("x-requested-with") == Some(package_name) {
            with += 1;
        } else {
            without += 1;
        }
    }
    match (with, without) {
        (0, 0) => EngineAttribution::Unknown,
        (_, 0) => EngineAttribution::Webview,
        (0, _) => EngineAttribution::Other,
        _ => EngineAttribution::Unknown,
    }
}
