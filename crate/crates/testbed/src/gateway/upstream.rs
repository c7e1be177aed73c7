//! Origin routing for intercepted requests.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::Duration;

use gauntlet_core::flow::Headers;
use tokio::io::BufReader;
use tokio::net::TcpStream;
use url::Url;

use crate::error::{Error, Result};
use crate::http1::{end_to_end, read_response, write_request, RequestHead, Response};

/// Host to origin-server address. Intercepted TLS is terminated at the
/// gateway, so origins are always reached in plaintext; the original scheme
/// travels in `X-Forwarded-Proto`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Upstreams {
    pub routes: BTreeMap<String, SocketAddr>,
    pub default: Option<SocketAddr>,
    pub timeout: Duration,
}

impl Upstreams {
    pub fn to_default(addr: SocketAddr) -> Self {
        Upstreams {
            routes: BTreeMap::new(),
            default: Some(addr),
            timeout: Duration::from_secs(10),
        }
    }

    pub fn resolve(&self, host: &str) -> Option<SocketAddr> {
        self.routes
            .get(&host.to_ascii_lowercase())
            .copied()
            .or(self.default)
    }

    pub async fn fetch(
        &self,
        method: &str,
        url: &Url,
        headers: &Headers,
        body: &[u8],
    ) -> Result<Response> {
        let host = url
            .host_str()
            .ok_or_else(|| Error::http(format!("{url}: no host")))?;
        let addr = self
            .resolve(host)
            .ok_or_else(|| Error::http(format!("no upstream route for {host}")))?;
        let timeout = if self.timeout.is_zero() {
            Duration::from_secs(10)
        } else {
            self.timeout
        };
        let fut = async {
            let mut stream = TcpStream::connect(addr).await?;
            let mut h = end_to_end(headers);
            h.remove("x-forwarded-proto");
            h.append("X-Forwarded-Proto", url.scheme());
            h.append("Connection", "close");
            if !h.contains("host") {
                h.append(
                    "Host",
                    url[url::Position::BeforeHost..url::Position::AfterPort].to_string(),
                );
            }
            let target = &url[url::Position::BeforePath..url::Position::AfterQuery];
            let head = RequestHead {
                method: method.to_string(),
                target: target.to_string(),
                version: 1,
                headers: h,
            };
            write_request(&mut stream, &head, body).await?;
            let mut r = BufReader::new(stream);
            read_response(&mut r, method).await
        };
        tokio::time::timeout(timeout, fut)
            .await
            .map_err(|_| Error::Timeout(format!("upstream {addr} for {url}")))?
    }
}
