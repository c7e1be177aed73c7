//! Tripwire injection into HTML responses.

use gauntlet_core::body::{decode_body, encode_body};
use gauntlet_core::dom::TRIPWIRE_PATH;
use gauntlet_core::flow::{CapturedFlow, Headers};
use gauntlet_core::COLLECTOR_HOST;
use tracing::warn;

/// Attribute that marks the injected element; its presence makes injection a no-op.
pub const MARKER: &str = "data-gauntlet-tripwire";

pub fn tripwire_tag() -> String {
    format!("<script src=\"//{COLLECTOR_HOST}{TRIPWIRE_PATH}\" {MARKER}=\"1\"></script>")
}

const SNIFF_LEN: usize = 512;

pub fn is_html(headers: &Headers, decoded: &[u8]) -> bool {
    if headers
        .content_type()
        .is_some_and(|ct| ct.to_ascii_lowercase().starts_with("text/html"))
    {
        return true;
    }
    let head = &decoded[..decoded.len().min(SNIFF_LEN)];
    find_ci(head, b"<html", 0).is_some()
}

fn find_ci(hay: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if needle.len() > hay.len() {
        return None;
    }
    (from..=hay.len() - needle.len())
        .find(|&i| hay[i..i + needle.len()].eq_ignore_ascii_case(needle))
}

/// Byte offset just past the opening `<name ...>` tag, if any.
fn after_open_tag(html: &[u8], name: &str) -> Option<usize> {
    let open = format!("<{name}");
    let mut from = 0;
    while let Some(i) = find_ci(html, open.as_bytes(), from) {
        let next = html.get(i + open.len()).copied();
        if matches!(next, Some(b'>' | b' ' | b'\t' | b'\n' | b'\r' | b'/')) {
            return html[i..].iter().position(|&b| b == b'>').map(|p| i + p + 1);
        }
        from = i + 1;
    }
    None
}

/// Inserts the tripwire as the first child of `<head>`, else `<body>`, else
/// `<html>`, else at the very start. Returns `None` when already injected.
pub fn inject_html(html: &[u8]) -> Option<Vec<u8>> {
    if find_ci(html, MARKER.as_bytes(), 0).is_some() {
        return None;
    }
    let at = ["head", "body", "html"]
        .iter()
        .find_map(|t| after_open_tag(html, t))
        .unwrap_or(0);
    let mut out = Vec::with_capacity(html.len() + 96);
    out.extend_from_slice(&html[..at]);
    out.extend_from_slice(tripwire_tag().as_bytes());
    out.extend_from_slice(&html[at..]);
    Some(out)
}

/// Injects into an encoded response body, fixing `Content-Length`. Non-HTML
/// and undecodable bodies are returned untouched.
pub fn inject_response(headers: &mut Headers, body: Vec<u8>) -> Vec<u8> {
    let decoded = match decode_body(headers, &body) {
        Ok(d) => d,
        Err(e) => {
            if headers.content_type().is_some_and(|c| c.contains("html")) {
                warn!(error = %e, "cannot decode HTML body, tripwire not injected");
            }
            return body;
        }
    };
    if !is_html(headers, &decoded) {
        return body;
    }
    let Some(injected) = inject_html(&decoded) else {
        return body;
    };
    match encode_body(headers, &injected) {
        Ok(encoded) => {
            if headers.contains("content-length") {
                headers.set("Content-Length", encoded.len().to_string());
            }
            encoded
        }
        Err(e) => {
            warn!(error = %e, "cannot re-encode HTML body, tripwire not injected");
            body
        }
    }
}

/// Copy of the flow with the tripwire injected into its response.
pub fn inject_tripwire(flow: &CapturedFlow) -> CapturedFlow {
    let mut out = flow.clone();
    let body = std::mem::take(&mut out.response_body);
    out.response_body = inject_response(&mut out.response_headers, body);
    out
}
