//! A single network filter rule and its matcher.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::request::{is_token_char, RequestContext, ResourceType};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("regular-expression rules are not supported")]
    Regex,
    #[error("unsupported option `{0}`")]
    UnsupportedOption(String),
    #[error("domain `{0}` is both included and excluded")]
    ConflictingDomain(String),
    #[error("empty domain option")]
    EmptyDomain,
    #[error("HTML filtering rules are not supported")]
    HtmlFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    None,
    /// `||`: match at a hostname label boundary.
    Domain,
    /// `|` at the start of the pattern.
    Start,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternToken {
    Literal(String),
    /// `*`
    Wildcard,
    /// `^`
    Separator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Party {
    ThirdParty,
    FirstParty,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleOptions {
    pub party: Option<Party>,
    /// Explicitly listed types; empty means "all network types".
    pub include_types: Vec<ResourceType>,
    pub exclude_types: Vec<ResourceType>,
    pub domains_include: Vec<String>,
    pub domains_exclude: Vec<String>,
    pub match_case: bool,
}

/// Types a rule without type options applies to. Popups and top-level
/// documents need an explicit option.
const DEFAULT_TYPE_MASK: u16 = {
    let mut mask = 0u16;
    let mut i = 0;
    while i < ResourceType::ALL.len() {
        mask |= 1 << (ResourceType::ALL[i] as u16);
        i += 1;
    }
    mask & !(1 << (ResourceType::Popup as u16)) & !(1 << (ResourceType::Document as u16))
};

impl RuleOptions {
    fn type_mask(&self) -> u16 {
        let base = if self.include_types.is_empty() {
            DEFAULT_TYPE_MASK
        } else {
            self.include_types.iter().fold(0, |m, t| m | t.bit())
        };
        self.exclude_types.iter().fold(base, |m, t| m & !t.bit())
    }

    fn domain_applies(&self, page_host: &str) -> bool {
        if self.domains_include.is_empty() && self.domains_exclude.is_empty() {
            return true;
        }
        // The most specific matching entry decides.
        let best = |list: &[String]| {
            list.iter()
                .filter(|d| host_within(page_host, d))
                .map(|d| d.len())
                .max()
        };
        match (best(&self.domains_include), best(&self.domains_exclude)) {
            (Some(i), Some(e)) => i > e,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => self.domains_include.is_empty(),
        }
    }
}

fn host_within(host: &str, domain: &str) -> bool {
    host == domain
        || (host.len() > domain.len()
            && host.ends_with(domain)
            && host.as_bytes()[host.len() - domain.len() - 1] == b'.')
}

/// A parsed network filter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterRule {
    pub raw: String,
    pub exception: bool,
    pub anchor: Anchor,
    /// Trailing `|`.
    pub end_anchor: bool,
    pub pattern: Vec<PatternToken>,
    pub options: RuleOptions,
    #[serde(skip)]
    compiled: Vec<PatternToken>,
    #[serde(skip)]
    longest_literal: String,
}

impl PartialEq for FilterRule {
    /// Semantic equality; the original line text is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.exception == other.exception
            && self.anchor == other.anchor
            && self.end_anchor == other.end_anchor
            && self.pattern == other.pattern
            && self.options == other.options
    }
}

impl FilterRule {
    /// Parses one network rule. Comments and cosmetic rules are handled by the
    /// list parser and must not reach this function.
    pub fn parse(line: &str) -> Result<FilterRule, RuleError> {
        let raw = line.trim();
        let (exception, body) = match raw.strip_prefix("@@") {
            Some(rest) => (true, rest),
            None => (false, raw),
        };
        if body.contains("$$") || body.contains("$@$") {
            return Err(RuleError::HtmlFilter);
        }
        let (pattern_text, option_text) = split_options(body);
        if pattern_text.len() > 1 && pattern_text.starts_with('/') && pattern_text.ends_with('/') {
            return Err(RuleError::Regex);
        }
        let options = match option_text {
            Some(text) => parse_options(text)?,
            None => RuleOptions::default(),
        };

        let (anchor, rest) = if let Some(r) = pattern_text.strip_prefix("||") {
            (Anchor::Domain, r)
        } else if let Some(r) = pattern_text.strip_prefix('|') {
            (Anchor::Start, r)
        } else {
            (Anchor::None, pattern_text)
        };
        let (end_anchor, rest) = match rest.strip_suffix('|') {
            Some(r) => (true, r),
            None => (false, rest),
        };
        let pattern = tokenize(rest);
        Ok(FilterRule::from_parts(
            raw.to_string(),
            exception,
            anchor,
            end_anchor,
            pattern,
            options,
        ))
    }

    fn from_parts(
        raw: String,
        exception: bool,
        anchor: Anchor,
        end_anchor: bool,
        pattern: Vec<PatternToken>,
        options: RuleOptions,
    ) -> FilterRule {
        let compiled: Vec<PatternToken> = pattern
            .iter()
            .map(|t| match t {
                PatternToken::Literal(l) if !options.match_case => {
                    PatternToken::Literal(l.to_ascii_lowercase())
                }
                other => other.clone(),
            })
            .collect();
        let longest_literal = compiled
            .iter()
            .filter_map(|t| match t {
                PatternToken::Literal(l) => Some(l.to_ascii_lowercase()),
                _ => None,
            })
            .max_by_key(|l| l.len())
            .unwrap_or_default();
        FilterRule {
            raw,
            exception,
            anchor,
            end_anchor,
            pattern,
            options,
            compiled,
            longest_literal,
        }
    }

    /// Whether this rule's conditions all hold for `ctx`. Exception status is
    /// not considered here.
    pub fn matches(&self, ctx: &RequestContext) -> bool {
        if self.options.type_mask() & ctx.resource_type.bit() == 0 {
            return false;
        }
        match self.options.party {
            Some(Party::ThirdParty) if !ctx.is_third_party => return false,
            Some(Party::FirstParty) if ctx.is_third_party => return false,
            _ => {}
        }
        if !self.options.domain_applies(&ctx.page_host) {
            return false;
        }
        if !self.longest_literal.is_empty() && !ctx.url_lower.contains(&self.longest_literal) {
            return false;
        }
        let text = if self.options.match_case {
            ctx.url.as_bytes()
        } else {
            ctx.url_lower.as_bytes()
        };
        let mut matcher = PatternMatcher::new(&self.compiled, text, self.end_anchor);
        match self.anchor {
            Anchor::Start => matcher.match_at(0, 0),
            Anchor::Domain => (ctx.host_start..ctx.host_end)
                .filter(|&p| p == ctx.host_start || text[p - 1] == b'.')
                .any(|p| matcher.match_at(0, p)),
            Anchor::None => (0..=text.len()).any(|p| matcher.match_at(0, p)),
        }
    }

    /// Hostname key for `||host^`-style rules whose leading literal is a
    /// complete hostname.
    pub(crate) fn host_key(&self) -> Option<String> {
        if self.anchor != Anchor::Domain {
            return None;
        }
        let PatternToken::Literal(first) = self.compiled.first()? else {
            return None;
        };
        let first = first.to_ascii_lowercase();
        let (host, complete) = match first.find(['/', ':']) {
            Some(i) => (&first[..i], true),
            None => (
                first.as_str(),
                matches!(self.compiled.get(1), Some(PatternToken::Separator))
                    || (self.compiled.len() == 1 && self.end_anchor),
            ),
        };
        let valid = !host.is_empty()
            && !host.starts_with('.')
            && !host.ends_with('.')
            && host
                .bytes()
                .all(|c| c.is_ascii_alphanumeric() || c == b'-' || c == b'.');
        (complete && valid).then(|| host.to_string())
    }

    /// Longest token of the pattern that must appear as a whole URL token in
    /// any matching URL.
    pub(crate) fn token_key(&self) -> Option<String> {
        let n = self.compiled.len();
        let mut best: Option<String> = None;
        for (i, tok) in self.compiled.iter().enumerate() {
            let PatternToken::Literal(lit) = tok else {
                continue;
            };
            let lit = lit.to_ascii_lowercase();
            let bytes = lit.as_bytes();
            let left_edge_bounded = if i == 0 {
                matches!(self.anchor, Anchor::Start | Anchor::Domain)
            } else {
                matches!(self.compiled[i - 1], PatternToken::Separator)
            };
            let right_edge_bounded = if i + 1 == n {
                self.end_anchor
            } else {
                matches!(self.compiled[i + 1], PatternToken::Separator)
            };
            let mut start = 0;
            while start < bytes.len() {
                if !is_token_char(bytes[start]) {
                    start += 1;
                    continue;
                }
                let mut end = start;
                while end < bytes.len() && is_token_char(bytes[end]) {
                    end += 1;
                }
                let left_ok = start > 0 || left_edge_bounded;
                let right_ok = end < bytes.len() || right_edge_bounded;
                if left_ok && right_ok && best.as_ref().is_none_or(|b| b.len() < end - start) {
                    best = Some(lit[start..end].to_string());
                }
                start = end;
            }
        }
        best
    }
}

impl fmt::Display for FilterRule {
    /// Canonical text form; parsing it yields a semantically equal rule.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exception {
            f.write_str("@@")?;
        }
        match self.anchor {
            Anchor::Domain => f.write_str("||")?,
            Anchor::Start => f.write_str("|")?,
            Anchor::None => {}
        }
        for tok in &self.pattern {
            match tok {
                PatternToken::Literal(l) => f.write_str(l)?,
                PatternToken::Wildcard => f.write_str("*")?,
                PatternToken::Separator => f.write_str("^")?,
            }
        }
        if self.end_anchor {
            f.write_str("|")?;
        }
        let o = &self.options;
        let mut opts: Vec<String> = Vec::new();
        match o.party {
            Some(Party::ThirdParty) => opts.push("third-party".into()),
            Some(Party::FirstParty) => opts.push("~third-party".into()),
            None => {}
        }
        opts.extend(o.include_types.iter().map(|t| t.option_name().to_string()));
        opts.extend(
            o.exclude_types
                .iter()
                .map(|t| format!("~{}", t.option_name())),
        );
        if !o.domains_include.is_empty() || !o.domains_exclude.is_empty() {
            let entries: Vec<String> = o
                .domains_include
                .iter()
                .cloned()
                .chain(o.domains_exclude.iter().map(|d| format!("~{d}")))
                .collect();
            opts.push(format!("domain={}", entries.join("|")));
        }
        if o.match_case {
            opts.push("match-case".into());
        }
        if !opts.is_empty() {
            write!(f, "${}", opts.join(","))?;
        }
        Ok(())
    }
}

fn split_options(body: &str) -> (&str, Option<&str>) {
    match body.rfind('$') {
        Some(i) if i + 1 < body.len() => {
            let opts = &body[i + 1..];
            let name_end = opts.find([',', '=']).unwrap_or(opts.len());
            let looks_like_options = name_end > 0
                && opts[..name_end]
                    .bytes()
                    .all(|c| c.is_ascii_alphanumeric() || c == b'-' || c == b'~' || c == b'_');
            if looks_like_options {
                (&body[..i], Some(opts))
            } else {
                (body, None)
            }
        }
        _ => (body, None),
    }
}

fn parse_options(text: &str) -> Result<RuleOptions, RuleError> {
    let mut o = RuleOptions::default();
    for opt in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let lower = opt.to_ascii_lowercase();
        let (negated, name) = match lower.strip_prefix('~') {
            Some(n) => (true, n),
            None => (false, lower.as_str()),
        };
        match name {
            "third-party" | "3p" => {
                o.party = Some(if negated {
                    Party::FirstParty
                } else {
                    Party::ThirdParty
                })
            }
            "first-party" | "1p" => {
                o.party = Some(if negated {
                    Party::ThirdParty
                } else {
                    Party::FirstParty
                })
            }
            "match-case" if !negated => o.match_case = true,
            "collapse" => {}
            _ if name.starts_with("domain=") || name.starts_with("from=") => {
                if negated {
                    return Err(RuleError::UnsupportedOption(opt.to_string()));
                }
                let value = name.split_once('=').map(|(_, v)| v).unwrap_or("");
                parse_domains(value, &mut o)?;
            }
            _ => match ResourceType::from_option(name) {
                Some(t) if negated => o.exclude_types.push(t),
                Some(t) => o.include_types.push(t),
                None => return Err(RuleError::UnsupportedOption(opt.to_string())),
            },
        }
    }
    o.include_types.sort();
    o.include_types.dedup();
    o.exclude_types.sort();
    o.exclude_types.dedup();
    Ok(o)
}

fn parse_domains(value: &str, o: &mut RuleOptions) -> Result<(), RuleError> {
    for entry in value.split('|').map(str::trim) {
        let (excluded, domain) = match entry.strip_prefix('~') {
            Some(d) => (true, d),
            None => (false, entry),
        };
        if domain.is_empty() {
            return Err(RuleError::EmptyDomain);
        }
        if domain.contains('*') || domain.contains('/') {
            return Err(RuleError::UnsupportedOption(format!("domain={value}")));
        }
        let domain = domain.trim_end_matches('.').to_string();
        if excluded {
            o.domains_exclude.push(domain);
        } else {
            o.domains_include.push(domain);
        }
    }
    o.domains_include.sort();
    o.domains_include.dedup();
    o.domains_exclude.sort();
    o.domains_exclude.dedup();
    if let Some(d) = o
        .domains_include
        .iter()
        .find(|d| o.domains_exclude.contains(d))
    {
        return Err(RuleError::ConflictingDomain(d.clone()));
    }
    Ok(())
}

fn tokenize(text: &str) -> Vec<PatternToken> {
    let mut out: Vec<PatternToken> = Vec::new();
    let mut lit = String::new();
    for c in text.chars() {
        match c {
            '*' | '^' => {
                if !lit.is_empty() {
                    out.push(PatternToken::Literal(std::mem::take(&mut lit)));
                }
                let tok = if c == '*' {
                    PatternToken::Wildcard
                } else {
                    PatternToken::Separator
                };
                if tok == PatternToken::Wildcard && out.last() == Some(&PatternToken::Wildcard) {
                    continue;
                }
                out.push(tok);
            }
            _ => lit.push(c),
        }
    }
    if !lit.is_empty() {
        out.push(PatternToken::Literal(lit));
    }
    out
}

/// Separator semantics of `^`: anything but a letter, a digit or one of `_ - . %`.
pub fn is_separator(c: u8) -> bool {
    !(c.is_ascii_alphanumeric() || matches!(c, b'_' | b'-' | b'.' | b'%'))
}

/// Memoized backtracking matcher over pattern tokens.
struct PatternMatcher<'a> {
    tokens: &'a [PatternToken],
    text: &'a [u8],
    end_anchor: bool,
    failed: Vec<bool>,
}

impl<'a> PatternMatcher<'a> {
    fn new(tokens: &'a [PatternToken], text: &'a [u8], end_anchor: bool) -> Self {
        PatternMatcher {
            tokens,
            text,
            end_anchor,
            failed: Vec::new(),
        }
    }

    fn match_at(&mut self, ti: usize, pos: usize) -> bool {
        if ti == self.tokens.len() {
            return !self.end_anchor || pos == self.text.len();
        }
        let width = self.text.len() + 1;
        let slot = ti * width + pos;
        if self.failed.get(slot).copied().unwrap_or(false) {
            return false;
        }
        let ok = match &self.tokens[ti] {
            PatternToken::Literal(l) => {
                self.text[pos..].starts_with(l.as_bytes()) && self.match_at(ti + 1, pos + l.len())
            }
            PatternToken::Separator => {
                if pos == self.text.len() {
                    self.match_at(ti + 1, pos)
                } else {
                    is_separator(self.text[pos]) && self.match_at(ti + 1, pos + 1)
                }
            }
            PatternToken::Wildcard => (pos..=self.text.len()).any(|p| self.match_at(ti + 1, p)),
        };
        if !ok {
            if self.failed.is_empty() {
                self.failed = vec![false; self.tokens.len() * width];
            }
            self.failed[slot] = true;
        }
        ok
    }
}
