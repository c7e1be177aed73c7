//! Adblock-syntax network filter lists.
//!
//! Supported: `||`/`|` anchors, trailing `|`, `*` wildcards, `^` separators,
//! `@@` exceptions, `$third-party` (and its negation), `$domain=`, resource
//! type options and `$match-case`. Element hiding rules are skipped and
//! counted; anything else is logged as unsupported with its line number.

mod index;
mod request;
mod rule;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::debug;

pub use index::RuleIndex;
pub use request::{RequestContext, ResourceType};
pub use rule::{is_separator, Anchor, FilterRule, Party, PatternToken, RuleError, RuleOptions};

use crate::{Error, Result};

static BUNDLED_EASYLIST: &str = include_str!("../../data/filters/easylist.txt");
static BUNDLED_EASYPRIVACY: &str = include_str!("../../data/filters/easyprivacy.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnsupportedLine {
    pub line: usize,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub lines: usize,
    pub rules: usize,
    pub comments: usize,
    pub blank: usize,
    pub cosmetic: usize,
    pub unsupported: Vec<UnsupportedLine>,
}

impl ParseStats {
    /// Fraction of network-rule candidates (rules + unsupported) that could not be parsed.
    pub fn unsupported_rate(&self) -> f64 {
        let candidates = self.rules + self.unsupported.len();
        if candidates == 0 {
            0.0
        } else {
            self.unsupported.len() as f64 / candidates as f64
        }
    }

    /// Unsupported lines grouped by reason, for reports.
    pub fn unsupported_by_reason(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for u in &self.unsupported {
            let key = match u.reason.split_once('`') {
                Some((head, _)) => head.trim().to_string(),
                None => u.reason.clone(),
            };
            *out.entry(key).or_insert(0) += 1;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchVerdict<'a> {
    Blocked(&'a FilterRule),
    /// A blocking rule matched but an exception overrides it.
    Exempted(&'a FilterRule),
    Unmatched,
}

impl<'a> MatchVerdict<'a> {
    pub fn is_blocked(&self) -> bool {
        matches!(self, MatchVerdict::Blocked(_))
    }

    pub fn rule(&self) -> Option<&'a FilterRule> {
        match self {
            MatchVerdict::Blocked(r) | MatchVerdict::Exempted(r) => Some(r),
            MatchVerdict::Unmatched => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterList {
    pub name: String,
    pub version: Option<String>,
    rules: Vec<FilterRule>,
    index: RuleIndex,
    pub stats: ParseStats,
}

fn is_cosmetic(line: &str) -> bool {
    ["##", "#@#", "#?#", "#@?#", "#$#", "#@$#", "#%#", "#@%#"]
        .iter()
        .any(|m| line.contains(m))
}

impl FilterList {
    /// Parses a newline-delimited list. Never fails: unsupported syntax is
    /// recorded in [`ParseStats::unsupported`].
    pub fn parse(name: &str, text: &str) -> FilterList {
        let mut stats = ParseStats::default();
        let mut version = None;
        let mut rules = Vec::new();
        for (n, line) in text.lines().enumerate() {
            stats.lines += 1;
            let line = line.trim();
            if line.is_empty() {
                stats.blank += 1;
            } else if let Some(comment) = line.strip_prefix('!') {
                stats.comments += 1;
                if let Some(v) = comment.trim().strip_prefix("Version:") {
                    version.get_or_insert_with(|| v.trim().to_string());
                }
            } else if line.starts_with('[') && line.ends_with(']') {
                stats.comments += 1;
            } else if is_cosmetic(line) {
                stats.cosmetic += 1;
            } else {
                match FilterRule::parse(line) {
                    Ok(rule) => rules.push(rule),
                    Err(e) => {
                        debug!(list = name, line = n + 1, reason = %e, "skipping filter");
                        stats.unsupported.push(UnsupportedLine {
                            line: n + 1,
                            text: line.to_string(),
                            reason: e.to_string(),
                        });
                    }
                }
            }
        }
        stats.rules = rules.len();
        let index = RuleIndex::build(&rules);
        FilterList {
            name: name.to_string(),
            version,
            rules,
            index,
            stats,
        }
    }

    pub fn from_file(path: &Path) -> Result<FilterList> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "list".to_string());
        Ok(FilterList::parse(&name, &text))
    }

    /// The EasyList snapshot shipped with the crate.
    pub fn bundled_easylist() -> FilterList {
        FilterList::parse("easylist", BUNDLED_EASYLIST)
    }

    /// The EasyPrivacy snapshot shipped with the crate.
    pub fn bundled_easyprivacy() -> FilterList {
        FilterList::parse("easyprivacy", BUNDLED_EASYPRIVACY)
    }

    pub fn rules(&self) -> &[FilterRule] {
        &self.rules
    }

    /// Indexed match.
    pub fn matches(&self, ctx: &RequestContext) -> MatchVerdict<'_> {
        let candidates = self.index.candidates(ctx);
        verdict(candidates.into_iter().map(|i| &self.rules[i]), ctx)
    }

    /// Reference matcher: a linear scan over every rule in list order.
    pub fn matches_linear(&self, ctx: &RequestContext) -> MatchVerdict<'_> {
        verdict(self.rules.iter(), ctx)
    }
}

/// Exceptions override blocks; within each class the first rule in list
/// order is reported.
fn verdict<'a>(
    rules: impl Iterator<Item = &'a FilterRule>,
    ctx: &RequestContext,
) -> MatchVerdict<'a> {
    let mut block = None;
    let mut exception = None;
    for rule in rules {
        let slot = if rule.exception {
            &mut exception
        } else {
            &mut block
        };
        if slot.is_none() && rule.matches(ctx) {
            *slot = Some(rule);
            if block.is_some() && exception.is_some() {
                break;
            }
        }
    }
    match (block, exception) {
        (None, _) => MatchVerdict::Unmatched,
        (Some(_), Some(e)) => MatchVerdict::Exempted(e),
        (Some(b), None) => MatchVerdict::Blocked(b),
    }
}

/// Reportable form of a rule hit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleHit {
    pub list: String,
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum SetVerdict {
    Blocked(RuleHit),
    Exempted(RuleHit),
    Unmatched,
}

impl SetVerdict {
    pub fn is_blocked(&self) -> bool {
        matches!(self, SetVerdict::Blocked(_))
    }
}

/// Several lists applied together, as a browser applies its subscriptions:
/// an exception from any list overrides a block from any list.
#[derive(Debug, Clone, Default)]
pub struct FilterSet {
    pub lists: Vec<FilterList>,
}

impl FilterSet {
    pub fn new(lists: Vec<FilterList>) -> Self {
        FilterSet { lists }
    }

    pub fn bundled() -> Self {
        FilterSet::new(vec![
            FilterList::bundled_easylist(),
            FilterList::bundled_easyprivacy(),
        ])
    }

    pub fn versions(&self) -> BTreeMap<String, Option<String>> {
        self.lists
            .iter()
            .map(|l| (l.name.clone(), l.version.clone()))
            .collect()
    }

    pub fn matches(&self, ctx: &RequestContext) -> SetVerdict {
        let mut block = None;
        for list in &self.lists {
            match list.matches(ctx) {
                MatchVerdict::Exempted(r) => {
                    return SetVerdict::Exempted(RuleHit {
                        list: list.name.clone(),
                        rule: r.raw.clone(),
                    })
                }
                MatchVerdict::Blocked(r) if block.is_none() => {
                    block = Some(RuleHit {
                        list: list.name.clone(),
                        rule: r.raw.clone(),
                    })
                }
                _ => {}
            }
        }
        if let Some(hit) = block {
            // a later list may still carry an exception for it
            for list in &self.lists {
                if let Some(exc) = list.exception_for(ctx) {
                    return SetVerdict::Exempted(RuleHit {
                        list: list.name.clone(),
                        rule: exc.raw.clone(),
                    });
                }
            }
            return SetVerdict::Blocked(hit);
        }
        SetVerdict::Unmatched
    }
}

impl FilterList {
    fn exception_for(&self, ctx: &RequestContext) -> Option<&FilterRule> {
        self.index
            .candidates(ctx)
            .into_iter()
            .map(|i| &self.rules[i])
            .find(|r| r.exception && r.matches(ctx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(url: &str, page: &str, rt: ResourceType) -> RequestContext {
        RequestContext::new(url, page, rt).unwrap()
    }

    #[test]
    fn comments_and_blanks_are_counted() {
        let list = FilterList::parse("t", "! comment\n\n");
        assert_eq!(list.rules().len(), 0);
        assert_eq!(list.stats.comments, 1);
        assert_eq!(list.stats.blank, 1);
    }

    #[test]
    fn header_version_and_cosmetics() {
        let text = "[Adblock Plus 2.0]\n! Version: 201904161401\n##.ad\nexample.com#@#.banner\n||a.test^\n/re[g]ex/\n";
        let list = FilterList::parse("t", text);
        assert_eq!(list.version.as_deref(), Some("201904161401"));
        assert_eq!(list.stats.cosmetic, 2);
        assert_eq!(list.rules().len(), 1);
        assert_eq!(list.stats.unsupported.len(), 1);
        assert_eq!(list.stats.unsupported[0].line, 6);
    }

    #[test]
    fn exception_precedence() {
        let list = FilterList::parse("t", "||ads.example^\n@@||ads.example/ok/\n");
        let c = ctx(
            "http://ads.example/ok/x.js",
            "http://n.test/",
            ResourceType::Script,
        );
        assert!(
            matches!(list.matches(&c), MatchVerdict::Exempted(r) if r.raw == "@@||ads.example/ok/")
        );
        let c = ctx(
            "http://ads.example/x.js",
            "http://n.test/",
            ResourceType::Script,
        );
        assert!(matches!(list.matches(&c), MatchVerdict::Blocked(r) if r.raw == "||ads.example^"));
        // an exception alone does not produce a verdict
        let list = FilterList::parse("t", "@@||ads.example^\n");
        assert_eq!(list.matches(&c), MatchVerdict::Unmatched);
    }

    #[test]
    fn first_listed_rule_is_reported() {
        let list = FilterList::parse("t", "/x.js\n||ads.example^\n");
        let c = ctx(
            "http://ads.example/x.js",
            "http://n.test/",
            ResourceType::Script,
        );
        assert_eq!(list.matches(&c).rule().unwrap().raw, "/x.js");
    }

    #[test]
    fn set_exception_crosses_lists() {
        let set = FilterSet::new(vec![
            FilterList::parse("block", "||ads.example^\n"),
            FilterList::parse("allow", "@@||ads.example^$script\n"),
        ]);
        let c = ctx(
            "http://ads.example/x.js",
            "http://n.test/",
            ResourceType::Script,
        );
        assert!(matches!(set.matches(&c), SetVerdict::Exempted(h) if h.list == "allow"));
        let c = ctx(
            "http://ads.example/x.png",
            "http://n.test/",
            ResourceType::Image,
        );
        assert!(set.matches(&c).is_blocked());
    }
}
