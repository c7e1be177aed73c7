//! The bundled EasyList and EasyPrivacy snapshots.

use gauntlet_core::filter::{FilterList, FilterSet, RequestContext, ResourceType, SetVerdict};

fn report(list: &FilterList) {
    let s = &list.stats;
    println!(
        "{} ({}): lines={} rules={} cosmetic={} comments={} unsupported={} rate={:.4}",
        list.name,
        list.version.as_deref().unwrap_or("?"),
        s.lines,
        s.rules,
        s.cosmetic,
        s.comments,
        s.unsupported.len(),
        s.unsupported_rate()
    );
    for (reason, n) in s.unsupported_by_reason() {
        println!("  {reason}: {n}");
    }
}

#[test]
fn bundled_lists_parse_and_report_unsupported_rate() {
    for list in [
        FilterList::bundled_easylist(),
        FilterList::bundled_easyprivacy(),
    ] {
        report(&list);
        let s = &list.stats;
        assert!(
            s.rules > 5_000,
            "{} parsed only {} rules",
            list.name,
            s.rules
        );
        assert!(list.version.is_some());
        assert_eq!(
            s.lines,
            s.rules + s.comments + s.blank + s.cosmetic + s.unsupported.len()
        );
        assert!(
            s.unsupported_rate() < 0.05,
            "unsupported rate {}",
            s.unsupported_rate()
        );
    }
}

#[test]
fn bundled_lists_block_honeypage_trackers() {
    let set = FilterSet::bundled();
    let page = "http://honeypage.test/";
    let cases = [
        (
            "https://pagead2.googlesyndication.com/pagead/js/adsbygoogle.js",
            ResourceType::Script,
        ),
        (
            "https://c.amazon-adsystem.com/aax2/apstag.js",
            ResourceType::Script,
        ),
        (
            "https://www.google-analytics.com/analytics.js",
            ResourceType::Script,
        ),
        (
            "https://www.google-analytics.com/collect?v=1&t=pageview",
            ResourceType::Image,
        ),
    ];
    for (url, rt) in cases {
        let ctx = RequestContext::new(url, page, rt).unwrap();
        let v = set.matches(&ctx);
        assert!(v.is_blocked(), "{url}: {v:?}");
    }
    let clean = RequestContext::new(
        "http://honeypage.test/style.css",
        page,
        ResourceType::Stylesheet,
    )
    .unwrap();
    assert!(matches!(set.matches(&clean), SetVerdict::Unmatched));
}

#[test]
fn bundled_lists_survive_every_line_as_a_request() {
    // feed rule text back in as URLs; nothing may panic
    let set = FilterSet::bundled();
    let mut n = 0;
    for list in &set.lists {
        for r in list.rules().iter().step_by(7) {
            let raw = r.raw.as_str();
            let host: String = raw
                .chars()
                .filter(|c| c.is_ascii_alphanumeric() || *c == '.')
                .collect();
            let host = host.trim_matches('.');
            if host.is_empty() {
                continue;
            }
            if let Ok(ctx) = RequestContext::new(
                &format!("https://{host}/x?{}", raw.replace(['#', ' '], "")),
                "https://a.test/",
                ResourceType::Script,
            ) {
                let _ = set.matches(&ctx);
                n += 1;
            }
        }
    }
    println!("synthetic requests matched without panic: {n}");
    assert!(n > 1_000);
}
