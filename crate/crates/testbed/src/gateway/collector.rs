//! Tripwire and probe report sink on the reserved collector host.

use gauntlet_core::dom::{parse_tripwire_report, TRIPWIRE_PATH};
use gauntlet_core::leak::parse_probe_report;
use tracing::{info, warn};

use super::session::ActiveSession;
use crate::http1::Response;

pub const REPORT_PATH: &str = "/report";
pub const PROBE_PATH: &str = "/probe";

/// Served when no tripwire build is configured. Real subjects then report
/// nothing; simulated subjects post their reports directly.
pub const STUB_TRIPWIRE: &str = "/* gauntlet tripwire placeholder */\n";

pub fn handle(
    session: Option<&ActiveSession>,
    method: &str,
    path: &str,
    body: &[u8],
    tripwire_js: Option<&[u8]>,
) -> Response {
    let path = path.split('?').next().unwrap_or(path);
    match (method, path) {
        ("GET", p) if p == TRIPWIRE_PATH => {
            let js = tripwire_js.unwrap_or(STUB_TRIPWIRE.as_bytes()).to_vec();
            let mut r = Response::new(200, Some("application/javascript"), js);
            r.head.headers.append("Cache-Control", "no-store");
            r
        }
        ("OPTIONS", _) => {
            let mut r = Response::new(204, None, Vec::new());
            r.head.headers.append("Access-Control-Allow-Origin", "*");
            r.head
                .headers
                .append("Access-Control-Allow-Methods", "POST");
            r.head
                .headers
                .append("Access-Control-Allow-Headers", "content-type");
            r
        }
        ("POST", REPORT_PATH) | ("POST", PROBE_PATH) => {
            let Some(session) = session else {
                warn!(path, "report received outside a session");
                return Response::new(409, Some("text/plain"), b"no active session\n".to_vec());
            };
            let stored = if path == REPORT_PATH {
                parse_tripwire_report(body).map(|s| session.store_snapshot(&s))
            } else {
                parse_probe_report(body).map(|p| session.store_probe(&p))
            };
            let mut r = match stored {
                Ok(Ok(())) => Response::new(204, None, Vec::new()),
                Ok(Err(e)) => {
                    warn!(error = %e, "cannot persist report");
                    Response::new(500, Some("text/plain"), format!("{e}\n").into_bytes())
                }
                Err(e) => {
                    info!(error = %e, path, "malformed report archived");
                    if let Err(e) = session.store_malformed(body) {
                        warn!(error = %e, "cannot archive malformed report");
                    }
                    Response::new(400, Some("text/plain"), format!("{e}\n").into_bytes())
                }
            };
            r.head.headers.append("Access-Control-Allow-Origin", "*");
            r
        }
        _ => Response::new(404, Some("text/plain"), b"not found\n".to_vec()),
    }
}
