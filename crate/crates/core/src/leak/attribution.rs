use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use url::Url;

use crate::flow::{CapturedFlow, Transport};
use crate::COLLECTOR_HOST;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub flow_id: String,
}

/// Referer graph over one session. Edge order is chronological.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionGraph {
    pub nodes: Vec<String>,
    pub roots: Vec<String>,
    pub edges: Vec<Edge>,
    /// flow_id to root page URL.
    pub attributed: BTreeMap<String, String>,
    /// Flows with no referer chain to a root.
    pub unattributed: Vec<String>,
}

impl AttributionGraph {
    pub fn root_of(&self, flow_id: &str) -> Option<&str> {
        self.attributed.get(flow_id).map(String::as_str)
    }
}

/// URL identity used for nodes: fragment removed.
pub fn node_key(url: &str) -> String {
    match Url::parse(url) {
        Ok(mut u) => {
            u.set_fragment(None);
            u.to_string()
        }
        Err(_) => url.to_string(),
    }
}

fn origin_of(url: &str) -> Option<String> {
    Url::parse(url)
        .ok()
        .map(|u| u.origin().ascii_serialization())
}

fn is_origin_only(url: &str) -> bool {
    Url::parse(url)
        .map(|u| u.path() == "/" && u.query().is_none())
        .unwrap_or(false)
}

/// Owner of each node: the root that first makes it reachable when edges
/// are revealed one at a time in order. Roots own themselves.
pub fn reveal_owners(n: usize, roots: &[usize], edges: &[(usize, usize)]) -> Vec<Option<usize>> {
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for &r in roots {
        if owner[r].is_none() {
            owner[r] = Some(r);
        }
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(from, to) in edges {
        if from == to {
            continue;
        }
        adj[from].push(to);
        if let (Some(o), None) = (owner[from], owner[to]) {
            owner[to] = Some(o);
            let mut stack = vec![to];
            while let Some(x) = stack.pop() {
                for &y in &adj[x] {
                    if owner[y].is_none() {
                        owner[y] = Some(o);
                        stack.push(y);
                    }
                }
            }
        }
    }
    owner
}

/// Builds the referer graph for a session whose test pages are `roots`.
///
/// A referer that names no known node but is a bare origin is linked to the
/// most recently started root page with that origin. Collector traffic and
/// non-TCP records are left out.
pub fn build_attribution(flows: &[CapturedFlow], roots: &[String]) -> AttributionGraph {
    let mut ordered: Vec<&CapturedFlow> = flows
        .iter()
        .filter(|f| f.transport == Transport::Tcp && f.host().as_deref() != Some(COLLECTOR_HOST))
        .collect();
    ordered.sort_by(|a, b| (a.ts_start, &a.flow_id).cmp(&(b.ts_start, &b.flow_id)));

    let mut nodes: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut intern = |key: String, nodes: &mut Vec<String>| -> usize {
        *index.entry(key.clone()).or_insert_with(|| {
            nodes.push(key);
            nodes.len() - 1
        })
    };

    let root_keys: Vec<String> = roots.iter().map(|r| node_key(r)).collect();
    let root_ids: Vec<usize> = root_keys
        .iter()
        .map(|k| intern(k.clone(), &mut nodes))
        .collect();
    let flow_nodes: Vec<usize> = ordered
        .iter()
        .map(|f| intern(node_key(&f.url), &mut nodes))
        .collect();

    // first request time per root, for origin fallback
    let mut root_started: HashMap<usize, u64> = HashMap::new();
    for (f, &n) in ordered.iter().zip(&flow_nodes) {
        if root_ids.contains(&n) {
            root_started.entry(n).or_insert(f.ts_start);
        }
    }

    let known: std::collections::HashSet<String> = nodes.iter().cloned().collect();
    let mut edges = Vec::new();
    for (f, &to) in ordered.iter().zip(&flow_nodes) {
        let Some(referer) = f.request_headers.get("referer") else {
            continue;
        };
        let rkey = node_key(referer.trim());
        let from = if known.contains(&rkey) {
            Some(intern(rkey, &mut nodes))
        } else if is_origin_only(&rkey) {
            let origin = origin_of(&rkey);
            root_ids
                .iter()
                .filter(|r| origin_of(&nodes[**r]) == origin)
                .max_by_key(|r| {
                    let t = root_started.get(r).copied();
                    (t.is_some_and(|t| t <= f.ts_start), t)
                })
                .copied()
        } else {
            None
        };
        if let Some(from) = from {
            edges.push(Edge {
                from,
                to,
                flow_id: f.flow_id.clone(),
            });
        }
    }

    let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.from, e.to)).collect();
    let owner = reveal_owners(nodes.len(), &root_ids, &pairs);
    let mut attributed = BTreeMap::new();
    let mut unattributed = Vec::new();
    for (f, &n) in ordered.iter().zip(&flow_nodes) {
        match owner[n] {
            Some(r) => {
                attributed.insert(f.flow_id.clone(), nodes[r].clone());
            }
            None => unattributed.push(f.flow_id.clone()),
        }
    }
    AttributionGraph {
        nodes,
        roots: root_keys,
        edges,
        attributed,
        unattributed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::testutil::flow;

    fn req(id: &str, ts: u64, url: &str, referer: Option<&str>) -> CapturedFlow {
        let mut f = flow(id, "GET", url);
        f.ts_start = ts;
        f.ts_end = ts;
        if let Some(r) = referer {
            f.request_headers.append("Referer", r);
        }
        f
    }

    #[test]
    fn chain_of_two() {
        let page = "http://news.test/";
        let flows = vec![
            req("1", 1, page, None),
            req("2", 2, "http://cdn.test/app.js", Some(page)),
            req(
                "3",
                3,
                "http://t.test/beacon",
                Some("http://cdn.test/app.js"),
            ),
            req("4", 4, "http://unrelated.test/ping", None),
        ];
        let g = build_attribution(&flows, &[page.to_string()]);
        assert_eq!(g.root_of("3"), Some(page));
        assert_eq!(g.root_of("1"), Some(page));
        assert_eq!(g.unattributed, vec!["4".to_string()]);
    }

    #[test]
    fn origin_only_referer_falls_back_to_root() {
        let a = "https://news.test/a.html";
        let b = "https://news.test/b.html";
        let flows = vec![
            req("1", 1, a, None),
            req("2", 2, "https://x.test/1.js", Some("https://news.test/")),
            req("3", 3, b, None),
            req("4", 4, "https://x.test/2.js", Some("https://news.test/")),
        ];
        let g = build_attribution(&flows, &[a.to_string(), b.to_string()]);
        assert_eq!(g.root_of("2"), Some(a));
        assert_eq!(g.root_of("4"), Some(b));
    }

    #[test]
    fn earliest_reveal_wins() {
        // roots 0,1; edges in order: 1->2, 0->3, 3->2
        let owners = reveal_owners(4, &[0, 1], &[(1, 2), (0, 3), (3, 2)]);
        assert_eq!(owners, vec![Some(0), Some(1), Some(1), Some(0)]);
        // a later edge can still connect an earlier isolated subtree
        let owners = reveal_owners(4, &[0], &[(2, 3), (0, 2)]);
        assert_eq!(owners, vec![Some(0), None, Some(0), Some(0)]);
    }

    #[test]
    fn self_loops_and_cycles() {
        let owners = reveal_owners(3, &[0], &[(1, 1), (1, 2), (2, 1)]);
        assert_eq!(owners, vec![Some(0), None, None]);
    }
}
