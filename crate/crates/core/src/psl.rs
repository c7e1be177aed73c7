//! eTLD+1 computation against a pinned public-suffix snapshot.

use std::collections::HashSet;
use std::net::IpAddr;

use once_cell::sync::Lazy;

static BUNDLED_TEXT: &str = include_str!("../data/public_suffix_list.dat");

static BUNDLED: Lazy<PublicSuffixList> = Lazy::new(|| PublicSuffixList::parse(BUNDLED_TEXT));

#[derive(Debug, Clone, Default)]
pub struct PublicSuffixList {
    version: Option<String>,
    rules: HashSet<String>,
    /// `*.foo` rules, stored as `foo`.
    wildcards: HashSet<String>,
    /// `!foo.bar` rules, stored as `foo.bar`.
    exceptions: HashSet<String>,
}

impl PublicSuffixList {
    /// The snapshot shipped with the crate.
    pub fn bundled() -> &'static PublicSuffixList {
        &BUNDLED
    }

    pub fn parse(text: &str) -> Self {
        let mut list = PublicSuffixList::default();
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("// VERSION:") {
                list.version = Some(rest.trim().to_string());
                continue;
            }
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            let Some(rule) = line.split_whitespace().next() else {
                continue;
            };
            if let Some(exc) = rule.strip_prefix('!') {
                list.exceptions.insert(normalize(exc));
            } else if let Some(wild) = rule.strip_prefix("*.") {
                list.wildcards.insert(normalize(wild));
            } else {
                list.rules.insert(normalize(rule));
            }
        }
        list
    }

    pub fn version(&self) -> Option<&str> {
        self.version.as_deref()
    }

    pub fn len(&self) -> usize {
        self.rules.len() + self.wildcards.len() + self.exceptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of trailing labels forming the public suffix of `labels`.
    fn suffix_len(&self, labels: &[&str]) -> usize {
        let n = labels.len();
        for i in 0..n {
            if self.exceptions.contains(&labels[i..].join(".")) {
                return n - i - 1;
            }
        }
        let mut best = 1;
        for i in 0..n {
            let len = n - i;
            if len <= best {
                break;
            }
            if self.rules.contains(&labels[i..].join("."))
                || (i + 1 < n && self.wildcards.contains(&labels[i + 1..].join(".")))
            {
                best = len;
            }
        }
        best
    }

    pub fn public_suffix(&self, host: &str) -> Option<String> {
        let host = clean_host(host)?;
        let labels: Vec<&str> = host.split('.').collect();
        let len = self.suffix_len(&labels).min(labels.len());
        Some(labels[labels.len() - len..].join("."))
    }

    /// The registrable domain (eTLD+1), or `None` for IP literals, bare public
    /// suffixes and empty input.
    pub fn registrable_domain(&self, host: &str) -> Option<String> {
        let host = clean_host(host)?;
        let labels: Vec<&str> = host.split('.').collect();
        let len = self.suffix_len(&labels);
        if labels.len() <= len {
            return None;
        }
        Some(labels[labels.len() - len - 1..].join("."))
    }

    /// eTLD+1 with a fallback to the cleaned host itself, so that IP literals
    /// and single-label hosts still compare sensibly.
    pub fn site(&self, host: &str) -> String {
        self.registrable_domain(host)
            .unwrap_or_else(|| host.trim().trim_end_matches('.').to_ascii_lowercase())
    }

    pub fn same_site(&self, a: &str, b: &str) -> bool {
        let (a, b) = (self.site(a), self.site(b));
        !a.is_empty() && a == b
    }
}

fn normalize(label: &str) -> String {
    let lower = label.to_lowercase();
    if lower.is_ascii() {
        lower
    } else {
        idna::domain_to_ascii(&lower).unwrap_or(lower)
    }
}

fn clean_host(host: &str) -> Option<String> {
    let host = host
        .trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .trim_end_matches('.');
    if host.is_empty() || host.parse::<IpAddr>().is_ok() {
        return None;
    }
    if host.split('.').any(|l| l.is_empty()) {
        return None;
    }
    Some(normalize(host))
}

/// eTLD+1 using the bundled snapshot.
pub fn site(host: &str) -> String {
    PublicSuffixList::bundled().site(host)
}

pub fn same_site(a: &str, b: &str) -> bool {
    PublicSuffixList::bundled().same_site(a, b)
}
