use std::collections::HashMap;

use super::request::RequestContext;
use super::rule::FilterRule;

/// Candidate pre-selection for a list. Pure acceleration: every rule that can
/// match a request is returned by [`RuleIndex::candidates`].
///
/// Each rule lands in exactly one bucket: keyed by complete hostname for
/// `||host^` rules, else by its longest whole-token literal, else the
/// generic bucket that is always scanned.
#[derive(Debug, Clone, Default)]
pub struct RuleIndex {
    by_host: HashMap<String, Vec<usize>>,
    by_token: HashMap<String, Vec<usize>>,
    generic: Vec<usize>,
}

impl RuleIndex {
    pub fn build(rules: &[FilterRule]) -> Self {
        let mut index = RuleIndex::default();
        for (i, rule) in rules.iter().enumerate() {
            if let Some(host) = rule.host_key() {
                index.by_host.entry(host).or_default().push(i);
            } else if let Some(token) = rule.token_key() {
                index.by_token.entry(token).or_default().push(i);
            } else {
                index.generic.push(i);
            }
        }
        index
    }

    /// Sorted, deduplicated rule positions.
    pub fn candidates(&self, ctx: &RequestContext) -> Vec<usize> {
        let mut out = self.generic.clone();
        let host = ctx.host();
        let mut suffix = host;
        loop {
            if let Some(v) = self.by_host.get(suffix) {
                out.extend_from_slice(v);
            }
            match suffix.find('.') {
                Some(dot) => suffix = &suffix[dot + 1..],
                None => break,
            }
        }
        for token in ctx.tokens() {
            if let Some(v) = self.by_token.get(token) {
                out.extend_from_slice(v);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn generic_len(&self) -> usize {
        self.generic.len()
    }
}
