//! Request-to-page attribution checked against exhaustive path enumeration.

use gauntlet_core::flow::CapturedFlow;
use gauntlet_core::leak::{build_attribution, reveal_owners};
use proptest::prelude::*;

/// Owner by brute force: among all simple paths from a root, pick the one
/// whose edge indices, sorted descending, are lexicographically least. That
/// path is the first to become complete as edges appear in order.
fn brute_owner(n: usize, roots: &[usize], edges: &[(usize, usize)]) -> Vec<Option<usize>> {
    let mut best: Vec<Option<(Vec<usize>, usize)>> = vec![None; n];
    for &r in roots {
        let mut visited = vec![false; n];
        let mut used = Vec::new();
        walk(r, r, edges, &mut visited, &mut used, &mut best);
    }
    best.into_iter().map(|b| b.map(|(_, r)| r)).collect()
}

fn walk(
    root: usize,
    at: usize,
    edges: &[(usize, usize)],
    visited: &mut Vec<bool>,
    used: &mut Vec<usize>,
    best: &mut Vec<Option<(Vec<usize>, usize)>>,
) {
    let mut key = used.clone();
    key.sort_unstable_by(|a, b| b.cmp(a));
    let better = match &best[at] {
        None => true,
        Some((k, _)) => key < *k,
    };
    if better {
        best[at] = Some((key, root));
    }
    visited[at] = true;
    for (i, &(from, to)) in edges.iter().enumerate() {
        if from == at && !visited[to] {
            used.push(i);
            walk(root, to, edges, visited, used, best);
            used.pop();
        }
    }
    visited[at] = false;
}

fn graph() -> impl Strategy<Value = (usize, Vec<usize>, Vec<(usize, usize)>)> {
    (2usize..9).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::btree_set(0..n, 1..=3.min(n))
                .prop_map(|s| s.into_iter().collect::<Vec<_>>()),
            prop::collection::vec((0..n, 0..n), 0..14),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn reveal_order_equals_brute_force((n, roots, edges) in graph()) {
        let fast = reveal_owners(n, &roots, &edges);
        let slow = brute_owner(n, &roots, &edges);
        prop_assert_eq!(fast, slow);
    }

    #[test]
    fn flow_graph_agrees_with_brute_force((n, roots, edges) in graph()) {
        // node i is URL http://nI.test/ ; each edge becomes one request with a full referer
        let url = |i: usize| format!("http://n{i}.test/");
        let root_urls: Vec<String> = roots.iter().map(|&r| url(r)).collect();
        let flows: Vec<CapturedFlow> = edges
            .iter()
            .enumerate()
            .map(|(i, &(from, to))| {
                let mut f = CapturedFlow::new(&format!("f{i:03}"), "s", "GET", &url(to));
                f.ts_start = i as u64;
                f.request_headers.append("Referer", url(from));
                f
            })
            .collect();
        // node numbering inside the graph differs; compare by URL
        let g = build_attribution(&flows, &root_urls);
        let slow = brute_owner(n, &roots, &edges);
        for (i, &(_, to)) in edges.iter().enumerate() {
            let got = g.root_of(&format!("f{i:03}"));
            let want = slow[to].map(url);
            prop_assert_eq!(got.map(str::to_string), want);
        }
    }
}

#[test]
fn origin_only_referer_uses_latest_started_root() {
    let mut flows = Vec::new();
    let mut push = |id: &str, ts: u64, url: &str, referer: Option<&str>| {
        let mut f = CapturedFlow::new(id, "s", "GET", url);
        f.ts_start = ts;
        if let Some(r) = referer {
            f.request_headers.append("Referer", r);
        }
        flows.push(f);
    };
    push("p1", 0, "https://site.test/a", None);
    push(
        "t1",
        1,
        "https://tracker.test/x.js",
        Some("https://site.test/"),
    );
    push("p2", 2, "https://site.test/b", None);
    push(
        "t2",
        3,
        "https://tracker.test/y.js",
        Some("https://site.test/"),
    );
    push(
        "orphan",
        4,
        "https://lost.test/z",
        Some("https://elsewhere.test/page"),
    );
    let roots = vec![
        "https://site.test/a".to_string(),
        "https://site.test/b".to_string(),
    ];
    let g = build_attribution(&flows, &roots);
    assert_eq!(g.root_of("t1"), Some("https://site.test/a"));
    assert_eq!(g.root_of("t2"), Some("https://site.test/b"));
    assert_eq!(g.root_of("orphan"), None);
    assert!(g.unattributed.contains(&"orphan".to_string()));
}
