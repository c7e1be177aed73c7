use std::fmt;

use memchr::memmem;
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::orgs::OrgMap;
use crate::body::{decode_body, to_text};
use crate::digest::DigestKind;
use crate::flow::CapturedFlow;
use crate::profile::{parse_mac, DeviceProfile, PiiType};
use crate::{psl, COLLECTOR_HOST};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Plain,
    Md5,
    Sha1,
    Sha224,
    Sha256,
}

impl Encoding {
    pub const ALL: [Encoding; 5] = [
        Encoding::Plain,
        Encoding::Md5,
        Encoding::Sha1,
        Encoding::Sha224,
        Encoding::Sha256,
    ];

    pub fn digest(self) -> Option<DigestKind> {
        match self {
            Encoding::Plain => None,
            Encoding::Md5 => Some(DigestKind::Md5),
            Encoding::Sha1 => Some(DigestKind::Sha1),
            Encoding::Sha224 => Some(DigestKind::Sha224),
            Encoding::Sha256 => Some(DigestKind::Sha256),
        }
    }

    fn from_digest(kind: DigestKind) -> Self {
        match kind {
            DigestKind::Md5 => Encoding::Md5,
            DigestKind::Sha1 => Encoding::Sha1,
            DigestKind::Sha224 => Encoding::Sha224,
            DigestKind::Sha256 => Encoding::Sha256,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Encoding::Plain => "plain",
            Encoding::Md5 => "md5",
            Encoding::Sha1 => "sha1",
            Encoding::Sha224 => "sha224",
            Encoding::Sha256 => "sha256",
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where in the request the value was found. Ordered by search priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Url,
    Header,
    Body,
}

impl Location {
    pub const ALL: [Location; 3] = [Location::Url, Location::Header, Location::Body];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    First,
    Third,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PiiFinding {
    pub pii_type: PiiType,
    pub resettable: bool,
    pub encoding: Encoding,
    pub location: Location,
    pub destination_host: String,
    pub destination_org: Option<String>,
    pub flow_id: String,
    pub party: Party,
}

const URL_COMPONENT: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~');

pub(crate) fn url_encode(s: &str) -> String {
    utf8_percent_encode(s, URL_COMPONENT).to_string()
}

fn geo_text(v: f64, places: usize) -> String {
    format!("{v:.places$}")
}

/// Canonical `lat,lon` rendering hashed for digest geolocation leaks.
pub fn geo_digest_input(profile: &DeviceProfile) -> String {
    let g = profile.geolocation;
    format!("{},{}", geo_text(g.lat, 4), geo_text(g.lon, 4))
}

/// The string a leaking client transmits for `pii` in `encoding`.
/// Multi-valued types are comma-joined.
pub fn planted_value(profile: &DeviceProfile, pii: PiiType, encoding: Encoding) -> String {
    let plain: Vec<String> = match pii {
        PiiType::Adid => vec![profile.adid.clone()],
        PiiType::AndroidId => vec![profile.android_id.clone()],
        PiiType::Imei => vec![profile.imei.clone()],
        PiiType::Mac => vec![profile.mac_device.clone()],
        PiiType::Geolocation => vec![geo_digest_input(profile)],
        PiiType::AppList => profile.installed_apps.clone(),
    };
    match encoding.digest() {
        None => plain.join(","),
        Some(kind) => plain
            .iter()
            .map(|v| kind.hex(v.as_bytes()))
            .collect::<Vec<_>>()
            .join(","),
    }
}

#[derive(Debug, Clone)]
struct Needle {
    text: String,
    raw: Option<Vec<u8>>,
}

impl Needle {
    fn text(s: &str) -> Self {
        Needle {
            text: s.to_ascii_lowercase(),
            raw: None,
        }
    }
}

#[derive(Debug, Clone)]
enum Matcher {
    /// Any needle present.
    Any {
        pii: PiiType,
        encoding: Encoding,
        needles: Vec<Needle>,
    },
    /// Both halves of one pair present in the flow.
    Pair {
        pii: PiiType,
        pairs: Vec<(String, String)>,
    },
    /// At least `min` distinct groups have a needle present.
    Distinct {
        pii: PiiType,
        encoding: Encoding,
        groups: Vec<Vec<Needle>>,
        min: usize,
    },
}

fn plain_needles(forms: &[String]) -> Vec<Needle> {
    let mut out: Vec<Needle> = Vec::new();
    for f in forms {
        for s in [f.clone(), url_encode(f)] {
            let n = Needle::text(&s);
            if !out.iter().any(|o| o.text == n.text) {
                out.push(n);
            }
        }
    }
    out
}

fn digest_needles(kind: DigestKind, forms: &[String]) -> Vec<Needle> {
    let mut out: Vec<Needle> = Vec::new();
    for f in forms {
        let raw = kind.raw(f.as_bytes());
        let n = Needle {
            text: hex::encode(&raw),
            raw: Some(raw),
        };
        if !out.iter().any(|o| o.text == n.text) {
            out.push(n);
        }
    }
    out
}

fn case_forms(s: &str) -> Vec<String> {
    let mut v = vec![
        s.to_string(),
        s.to_ascii_lowercase(),
        s.to_ascii_uppercase(),
    ];
    v.sort();
    v.dedup();
    v
}

fn mac_forms(mac: &str) -> Vec<String> {
    let Some(bytes) = parse_mac(mac) else {
        return vec![mac.to_string()];
    };
    let parts: Vec<String> = bytes.iter().map(|b| format!("{b:02x}")).collect();
    let mut out = Vec::new();
    for sep in [":", "-", ""] {
        out.extend(case_forms(&parts.join(sep)));
    }
    out
}

fn single_matchers(pii: PiiType, forms: Vec<String>, out: &mut Vec<Matcher>) {
    out.push(Matcher::Any {
        pii,
        encoding: Encoding::Plain,
        needles: plain_needles(&forms),
    });
    for kind in DigestKind::ALL {
        out.push(Matcher::Any {
            pii,
            encoding: Encoding::from_digest(kind),
            needles: digest_needles(kind, &forms),
        });
    }
}

struct Haystack {
    url: String,
    headers: String,
    body: Body,
}

enum Body {
    Text(String),
    Raw { lower: Vec<u8>, raw: Vec<u8> },
}

impl Haystack {
    fn new(flow: &CapturedFlow) -> Self {
        let headers = flow
            .request_headers
            .iter()
            .map(|(k, v)| format!("{k}: {v}\n"))
            .collect::<String>()
            .to_lowercase();
        let body = match decode_body(&flow.request_headers, &flow.request_body) {
            Ok(bytes) => Body::Text(to_text(&flow.request_headers, &bytes).to_lowercase()),
            Err(e) => {
                warn!(flow = %flow.flow_id, error = %e, "request body undecodable, scanning raw bytes");
                Body::Raw {
                    lower: flow.request_body.to_ascii_lowercase(),
                    raw: flow.request_body.clone(),
                }
            }
        };
        Haystack {
            url: flow.url.to_lowercase(),
            headers,
            body,
        }
    }

    fn find_text(&self, text: &str) -> Option<Location> {
        if self.url.contains(text) {
            return Some(Location::Url);
        }
        if self.headers.contains(text) {
            return Some(Location::Header);
        }
        let in_body = match &self.body {
            Body::Text(b) => b.contains(text),
            Body::Raw { lower, .. } => memmem::find(lower, text.as_bytes()).is_some(),
        };
        in_body.then_some(Location::Body)
    }

    fn find(&self, needle: &Needle) -> Option<Location> {
        self.find_text(&needle.text)
            .or_else(|| match (&self.body, &needle.raw) {
                (Body::Raw { raw, .. }, Some(bytes)) => {
                    memmem::find(raw, bytes).map(|_| Location::Body)
                }
                _ => None,
            })
    }

    fn find_any(&self, needles: &[Needle]) -> Option<Location> {
        needles.iter().filter_map(|n| self.find(n)).min()
    }
}

/// Precomputed needle set for one device profile.
#[derive(Debug, Clone)]
pub struct PiiScanner {
    matchers: Vec<Matcher>,
    developer_site: Option<String>,
    orgs: OrgMap,
}

impl PiiScanner {
    pub fn new(profile: &DeviceProfile) -> Self {
        let mut matchers = Vec::new();
        single_matchers(PiiType::Adid, case_forms(&profile.adid), &mut matchers);
        single_matchers(
            PiiType::AndroidId,
            case_forms(&profile.android_id),
            &mut matchers,
        );
        single_matchers(PiiType::Imei, vec![profile.imei.clone()], &mut matchers);
        let mut macs = mac_forms(&profile.mac_device);
        macs.extend(mac_forms(&profile.mac_wifi));
        single_matchers(PiiType::Mac, macs, &mut matchers);

        let g = profile.geolocation;
        matchers.push(Matcher::Pair {
            pii: PiiType::Geolocation,
            pairs: [4, 3, 2]
                .iter()
                .map(|&p| (geo_text(g.lat, p), geo_text(g.lon, p)))
                .collect(),
        });
        let geo = vec![geo_digest_input(profile)];
        for kind in DigestKind::ALL {
            matchers.push(Matcher::Any {
                pii: PiiType::Geolocation,
                encoding: Encoding::from_digest(kind),
                needles: digest_needles(kind, &geo),
            });
        }

        let apps = &profile.installed_apps;
        let min = apps.len().clamp(1, 2);
        matchers.push(Matcher::Distinct {
            pii: PiiType::AppList,
            encoding: Encoding::Plain,
            groups: apps
                .iter()
                .map(|a| plain_needles(std::slice::from_ref(a)))
                .collect(),
            min,
        });
        for kind in DigestKind::ALL {
            matchers.push(Matcher::Distinct {
                pii: PiiType::AppList,
                encoding: Encoding::from_digest(kind),
                groups: apps
                    .iter()
                    .map(|a| digest_needles(kind, std::slice::from_ref(a)))
                    .collect(),
                min,
            });
        }

        PiiScanner {
            matchers,
            developer_site: None,
            orgs: OrgMap::default(),
        }
    }

    /// Findings whose destination shares this domain's eTLD+1 are first party.
    pub fn with_developer_domain(mut self, domain: Option<&str>) -> Self {
        self.developer_site = domain.filter(|d| !d.is_empty()).map(psl::site);
        self
    }

    pub fn with_orgs(mut self, orgs: OrgMap) -> Self {
        self.orgs = orgs;
        self
    }

    pub fn orgs(&self) -> &OrgMap {
        &self.orgs
    }

    /// One finding per (pii_type, encoding) present in the request side of
    /// the flow. Harness traffic to the collector is never scanned.
    pub fn scan(&self, flow: &CapturedFlow) -> Vec<PiiFinding> {
        let host = flow.host().unwrap_or_default();
        if host == COLLECTOR_HOST {
            return Vec::new();
        }
        let hay = Haystack::new(flow);
        let mut out = Vec::new();
        for m in &self.matchers {
            let hit = match m {
                Matcher::Any {
                    pii,
                    encoding,
                    needles,
                } => hay.find_any(needles).map(|l| (*pii, *encoding, l)),
                Matcher::Pair { pii, pairs } => pairs
                    .iter()
                    .filter_map(|(a, b)| match (hay.find_text(a), hay.find_text(b)) {
                        (Some(la), Some(lb)) => Some(la.min(lb)),
                        _ => None,
                    })
                    .min()
                    .map(|l| (*pii, Encoding::Plain, l)),
                Matcher::Distinct {
                    pii,
                    encoding,
                    groups,
                    min,
                } => {
                    let found: Vec<Location> =
                        groups.iter().filter_map(|g| hay.find_any(g)).collect();
                    (found.len() >= *min)
                        .then(|| found.iter().min().copied())
                        .flatten()
                        .map(|l| (*pii, *encoding, l))
                }
            };
            if let Some((pii, encoding, location)) = hit {
                out.push(self.finding(flow, &host, pii, encoding, location));
            }
        }
        out
    }

    pub fn scan_all<'a>(
        &self,
        flows: impl IntoIterator<Item = &'a CapturedFlow>,
    ) -> Vec<PiiFinding> {
        flows.into_iter().flat_map(|f| self.scan(f)).collect()
    }

    fn finding(
        &self,
        flow: &CapturedFlow,
        host: &str,
        pii: PiiType,
        encoding: Encoding,
        location: Location,
    ) -> PiiFinding {
        let party = match &self.developer_site {
            Some(site) if psl::site(host) == *site => Party::First,
            _ => Party::Third,
        };
        PiiFinding {
            pii_type: pii,
            resettable: pii.is_resettable(),
            encoding,
            location,
            destination_host: host.to_string(),
            destination_org: self.orgs.lookup(host).map(str::to_string),
            flow_id: flow.flow_id.clone(),
            party,
        }
    }
}

/// Scans a single flow with a fresh scanner.
pub fn scan_flow_for_pii(flow: &CapturedFlow, profile: &DeviceProfile) -> Vec<PiiFinding> {
    PiiScanner::new(profile).scan(flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::testutil::flow;
    use crate::profile::GeoPoint;

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

    fn kinds(f: &[PiiFinding]) -> Vec<(PiiType, Encoding, Location)> {
        f.iter()
            .map(|x| (x.pii_type, x.encoding, x.location))
            .collect()
    }

    #[test]
    fn adid_in_body() {
        let mut fl = flow("f1", "POST", "http://t.test/c");
        fl.request_body = format!("{{\"id\":\"{}\"}}", profile().adid).into_bytes();
        let f = scan_flow_for_pii(&fl, &profile());
        assert_eq!(
            kinds(&f),
            vec![(PiiType::Adid, Encoding::Plain, Location::Body)]
        );
        assert!(f[0].resettable);
        assert_eq!(f[0].party, Party::Third);
    }

    #[test]
    fn uppercase_and_url_encoded_variants() {
        let fl = flow(
            "f",
            "GET",
            "http://t.test/c?aid=9774D56D682E549C&m=02%3A00%3A5E%3A10%3A00%3A02",
        );
        let f = scan_flow_for_pii(&fl, &profile());
        assert_eq!(
            kinds(&f),
            vec![
                (PiiType::AndroidId, Encoding::Plain, Location::Url),
                (PiiType::Mac, Encoding::Plain, Location::Url)
            ]
        );
    }

    #[test]
    fn digest_of_uppercase_form() {
        let d = DigestKind::Sha1.hex(b"9774D56D682E549C");
        let fl = flow(
            "f",
            "GET",
            &format!("http://t.test/c?h={}", d.to_uppercase()),
        );
        assert_eq!(
            kinds(&scan_flow_for_pii(&fl, &profile())),
            vec![(PiiType::AndroidId, Encoding::Sha1, Location::Url)]
        );
    }

    #[test]
    fn geolocation_needs_both_coordinates() {
        let lone = flow("f", "GET", "http://t.test/?lat=40.7128");
        assert!(scan_flow_for_pii(&lone, &profile()).is_empty());
        let mut both = flow("f", "GET", "http://t.test/?lat=40.713");
        both.request_headers.append("X-Lon", "-74.006");
        assert_eq!(
            kinds(&scan_flow_for_pii(&both, &profile())),
            vec![(PiiType::Geolocation, Encoding::Plain, Location::Url)]
        );
    }

    #[test]
    fn app_list_needs_two_apps() {
        let one = flow("f", "GET", "http://t.test/?a=com.example.bank");
        assert!(scan_flow_for_pii(&one, &profile()).is_empty());
        let two = flow(
            "f",
            "GET",
            "http://t.test/?a=com.example.bank,com.example.chat",
        );
        assert_eq!(
            kinds(&scan_flow_for_pii(&two, &profile()))[0].0,
            PiiType::AppList
        );
    }

    #[test]
    fn raw_digest_bytes_in_undecodable_body() {
        let mut fl = flow("f", "POST", "http://t.test/c");
        fl.request_headers.append("Content-Encoding", "br");
        let mut body = b"\x00\x01".to_vec();
        body.extend(DigestKind::Md5.raw(b"490154203237518"));
        fl.request_body = body;
        assert_eq!(
            kinds(&scan_flow_for_pii(&fl, &profile())),
            vec![(PiiType::Imei, Encoding::Md5, Location::Body)]
        );
    }

    #[test]
    fn first_location_wins() {
        let p = profile();
        let mut fl = flow("f", "POST", &format!("http://t.test/?x={}", p.imei));
        fl.request_body = p.imei.clone().into_bytes();
        let f = scan_flow_for_pii(&fl, &p);
        assert_eq!(
            kinds(&f),
            vec![(PiiType::Imei, Encoding::Plain, Location::Url)]
        );
    }

    #[test]
    fn party_and_org() {
        let fl = flow(
            "f",
            "GET",
            &format!("https://api.vendor.test/?i={}", profile().imei),
        );
        let mut orgs = OrgMap::default();
        orgs.insert("vendor.test", "Vendor");
        let s = PiiScanner::new(&profile())
            .with_developer_domain(Some("www.vendor.test"))
            .with_orgs(orgs);
        let f = s.scan(&fl);
        assert_eq!(f[0].party, Party::First);
        assert_eq!(f[0].destination_org.as_deref(), Some("Vendor"));
    }

    #[test]
    fn collector_is_ignored() {
        let fl = flow(
            "f",
            "POST",
            &format!("http://{COLLECTOR_HOST}/report?{}", profile().imei),
        );
        assert!(scan_flow_for_pii(&fl, &profile()).is_empty());
    }

    #[test]
    fn planted_values() {
        let p = profile();
        assert_eq!(
            planted_value(&p, PiiType::Geolocation, Encoding::Plain),
            "40.7128,-74.0060"
        );
        assert_eq!(
            planted_value(&p, PiiType::AppList, Encoding::Plain),
            "com.example.bank,com.example.chat"
        );
        assert_eq!(planted_value(&p, PiiType::Imei, Encoding::Md5).len(), 32);
    }
}
