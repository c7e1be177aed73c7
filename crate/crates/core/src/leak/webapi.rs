use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// APIs exercised by the permissions probe page.
pub const PROBED_APIS: [&str; 10] = [
    "geolocation",
    "camera",
    "microphone",
    "battery",
    "accelerometer",
    "magnetometer",
    "gyroscope",
    "clipboard-read",
    "notifications",
    "persistent-storage",
];

/// Granted set of a stock WebView with no permission handling.
pub const WEBVIEW_DEFAULT_GRANTS: [&str; 3] = ["accelerometer", "battery", "magnetometer"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeState {
    Granted,
    Denied,
    Prompt,
    Unsupported,
    DeniedByError,
}

/// Body posted by the probe page to the collector's `/probe` endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub page_url: String,
    pub probes: BTreeMap<String, ProbeState>,
    pub ts: u64,
}

pub fn parse_probe_report(body: &[u8]) -> Result<ProbeReport> {
    let r: ProbeReport =
        serde_json::from_slice(body).map_err(|e| Error::MalformedReport(e.to_string()))?;
    if r.probes.is_empty() {
        return Err(Error::MalformedReport("probe report lists no APIs".into()));
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebApiExposure {
    /// False when no probe report was received.
    pub known: bool,
    pub granted: BTreeSet<String>,
    pub prompted: BTreeSet<String>,
    pub webview_default: bool,
    pub prompt_signature: bool,
    pub fully_blocking: bool,
}

impl WebApiExposure {
    pub fn unknown() -> Self {
        WebApiExposure {
            known: false,
            granted: BTreeSet::new(),
            prompted: BTreeSet::new(),
            webview_default: false,
            prompt_signature: false,
            fully_blocking: false,
        }
    }

    /// Nothing beyond the WebView default set is granted and nothing prompts.
    pub fn default_or_stricter(&self) -> bool {
        self.known
            && self.prompted.is_empty()
            && self
                .granted
                .iter()
                .all(|g| WEBVIEW_DEFAULT_GRANTS.contains(&g.as_str()))
    }
}

pub fn classify_webapi_exposure(report: Option<&ProbeReport>) -> WebApiExposure {
    let Some(report) = report else {
        return WebApiExposure::unknown();
    };
    let with = |s: ProbeState| -> BTreeSet<String> {
        report
            .probes
            .iter()
            .filter(|(_, v)| **v == s)
            .map(|(k, _)| k.clone())
            .collect()
    };
    let granted = with(ProbeState::Granted);
    let prompted = with(ProbeState::Prompt);
    let default: BTreeSet<String> = WEBVIEW_DEFAULT_GRANTS
        .iter()
        .map(|s| s.to_string())
        .collect();
    WebApiExposure {
        known: true,
        webview_default: granted == default && prompted.is_empty(),
        prompt_signature: !prompted.is_empty(),
        fully_blocking: granted.is_empty() && prompted.is_empty(),
        granted,
        prompted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(pairs: &[(&str, ProbeState)]) -> ProbeReport {
        let mut probes: BTreeMap<String, ProbeState> = PROBED_APIS
            .iter()
            .map(|a| (a.to_string(), ProbeState::Denied))
            .collect();
        for (k, v) in pairs {
            probes.insert(k.to_string(), *v);
        }
        ProbeReport {
            page_url: "http://permissions.test/".into(),
            probes,
            ts: 0,
        }
    }

    #[test]
    fn signatures() {
        use ProbeState::*;
        let w = classify_webapi_exposure(Some(&report(&[
            ("battery", Granted),
            ("accelerometer", Granted),
            ("magnetometer", Granted),
        ])));
        assert!(w.webview_default && w.default_or_stricter() && !w.fully_blocking);
        let p = classify_webapi_exposure(Some(&report(&[("geolocation", Prompt)])));
        assert!(p.prompt_signature && !p.webview_default && !p.default_or_stricter());
        let d = classify_webapi_exposure(Some(&report(&[])));
        assert!(d.fully_blocking && d.default_or_stricter());
        let g = classify_webapi_exposure(Some(&report(&[("camera", Granted)])));
        assert!(!g.default_or_stricter());
        let u = classify_webapi_exposure(None);
        assert!(!u.known && !u.default_or_stricter());
    }

    #[test]
    fn wire_format() {
        let body = br#"{"page_url":"http://permissions.test/","probes":{"battery":"granted","camera":"denied-by-error"},"ts":5,"ua":"x"}"#;
        let r = parse_probe_report(body).unwrap();
        assert_eq!(r.probes["camera"], ProbeState::DeniedByError);
        assert!(parse_probe_report(b"{\"page_url\":\"x\",\"probes\":{},\"ts\":1}").is_err());
        let again = parse_probe_report(serde_json::to_string(&r).unwrap().as_bytes()).unwrap();
        assert_eq!(again, r);
    }
}
