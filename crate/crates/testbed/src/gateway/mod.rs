//! Intercepting HTTP/HTTPS gateway.
//!
//! One TCP listener serves every client. The first bytes of a connection
//! decide how it is handled:
//!
//! - a TLS record: transparent interception, the SNI names the host;
//! - `CONNECT host:port`: explicit-proxy tunnel, then the same sniffing
//!   inside the tunnel;
//! - any other request line: plain HTTP, absolute-form targets (explicit
//!   proxy) or origin-form targets resolved through `Host` (transparent).
//!
//! Every request becomes one [`CapturedFlow`] appended to the active
//! session's flow log. HTML responses get the tripwire at serve time, so
//! the replay cache always holds origin bytes.

pub mod cache;
pub mod collector;
pub mod inject;
pub mod session;
pub mod udp;
pub mod upstream;

use std::net::{Ipv4Addr, SocketAddr};
use std::pin::Pin;
use std::sync::{Arc, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use gauntlet_core::archive::Archive;
use gauntlet_core::flow::{CacheOutcome, CapturedFlow, CertMode, CipherSuiteId, TlsInfo};
use gauntlet_core::COLLECTOR_HOST;
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream, UdpSocket};
use tokio::task::JoinHandle;
use tokio_rustls::TlsAcceptor;
use tracing::{debug, info, warn};
use url::Url;

use crate::ca::CertAuthority;
use crate::error::{Error, Result};
use crate::http1::{end_to_end, read_request, write_response, Io, Request, Response};
use crate::tls::{read_client_hello, rustls_version_label, version_label, Rewind};
use cache::{CachedResponse, ReplayCache, RequestKey, DEFAULT_VOLATILE};
pub use session::{ActiveSession, SessionStats};
use upstream::Upstreams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Fetch from origins and fill the cache.
    Record,
    /// Serve cached responses; misses fall through to origins and are logged.
    Replay,
    /// Fetch from origins without touching the cache.
    Live,
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub listen: SocketAddr,
    pub udp_listen: Option<SocketAddr>,
    pub upstreams: Upstreams,
    pub volatile_params: Vec<String>,
    /// Address handed out for every DNS A query when no resolver is configured.
    pub dns_answer: Ipv4Addr,
    pub dns_upstream: Option<SocketAddr>,
    pub tripwire_js: Option<Vec<u8>>,
    pub inject: bool,
}

impl GatewayConfig {
    pub fn new(listen: SocketAddr, upstreams: Upstreams) -> Self {
        GatewayConfig {
            listen,
            udp_listen: None,
            upstreams,
            volatile_params: DEFAULT_VOLATILE.iter().map(|s| s.to_string()).collect(),
            dns_answer: Ipv4Addr::LOCALHOST,
            dns_upstream: None,
            tripwire_js: None,
            inject: true,
        }
    }
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub(crate) struct Shared {
    config: GatewayConfig,
    ca: Arc<CertAuthority>,
    mode: RwLock<Mode>,
    cache: RwLock<ReplayCache>,
    session: RwLock<Option<Arc<ActiveSession>>>,
}

impl Shared {
    pub(crate) fn session(&self) -> Option<Arc<ActiveSession>> {
        self.session.read().expect("session lock poisoned").clone()
    }

    fn mode(&self) -> Mode {
        *self.mode.read().expect("mode lock poisoned")
    }
}

/// A running gateway. Dropping it stops the listeners.
pub struct Gateway {
    shared: Arc<Shared>,
    addr: SocketAddr,
    udp_addr: Option<SocketAddr>,
    tasks: Vec<JoinHandle<()>>,
}

impl Gateway {
    pub async fn start(
        config: GatewayConfig,
        ca: Arc<CertAuthority>,
        mode: Mode,
    ) -> Result<Gateway> {
        let listener = TcpListener::bind(config.listen).await?;
        let addr = listener.local_addr()?;
        let udp = match config.udp_listen {
            Some(a) => Some(UdpSocket::bind(a).await?),
            None => None,
        };
        let udp_addr = udp.as_ref().map(|u| u.local_addr()).transpose()?;
        let shared = Arc::new(Shared {
            config,
            ca,
            mode: RwLock::new(mode),
            cache: RwLock::new(ReplayCache::default()),
            session: RwLock::new(None),
        });
        let mut tasks = vec![tokio::spawn(accept_loop(listener, shared.clone()))];
        if let Some(u) = udp {
            tasks.push(tokio::spawn(udp::serve(u, shared.clone())));
        }
        info!(%addr, udp = ?udp_addr, ?mode, "gateway listening");
        Ok(Gateway {
            shared,
            addr,
            udp_addr,
            tasks,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn udp_addr(&self) -> Option<SocketAddr> {
        self.udp_addr
    }

    pub fn ca(&self) -> &Arc<CertAuthority> {
        &self.shared.ca
    }

    pub fn mode(&self) -> Mode {
        self.shared.mode()
    }

    pub fn set_mode(&self, mode: Mode) {
        *self.shared.mode.write().expect("mode lock poisoned") = mode;
    }

    /// Starts logging into `archive` under session `id`. Only one session may be active.
    pub fn begin_session(&self, archive: &Archive, id: &str, cert_mode: CertMode) -> Result<()> {
        let mut slot = self.shared.session.write().expect("session lock poisoned");
        if let Some(active) = slot.as_ref() {
            return Err(Error::Config(format!("session {} still active", active.id)));
        }
        *slot = Some(Arc::new(ActiveSession::open(archive, id, cert_mode)?));
        debug!(session = id, %cert_mode, "session started");
        Ok(())
    }

    pub fn end_session(&self) -> Option<SessionStats> {
        let s = self
            .shared
            .session
            .write()
            .expect("session lock poisoned")
            .take();
        s.map(|s| s.stats())
    }

    /// Ends the session once connections still working on it have logged
    /// their flows, or after `grace`. A client that gives up on a refused
    /// handshake returns before the gateway has written that flow.
    pub async fn finish_session(&self, grace: Duration) -> Option<SessionStats> {
        let s = self
            .shared
            .session
            .write()
            .expect("session lock poisoned")
            .take()?;
        let deadline = tokio::time::Instant::now() + grace;
        while Arc::strong_count(&s) > 1 && tokio::time::Instant::now() < deadline {
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        if Arc::strong_count(&s) > 1 {
            debug!(session = %s.id, "session closed with connections still active");
        }
        Some(s.stats())
    }

    pub fn with_cache<R>(&self, f: impl FnOnce(&ReplayCache) -> R) -> R {
        f(&self.shared.cache.read().expect("cache lock poisoned"))
    }

    pub fn with_cache_mut<R>(&self, f: impl FnOnce(&mut ReplayCache) -> R) -> R {
        f(&mut self.shared.cache.write().expect("cache lock poisoned"))
    }

    /// Installs `cache` and returns the previous one.
    pub fn replace_cache(&self, cache: ReplayCache) -> ReplayCache {
        std::mem::replace(
            &mut *self.shared.cache.write().expect("cache lock poisoned"),
            cache,
        )
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

async fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                let shared = shared.clone();
                tokio::spawn(async move {
                    if let Err(e) = serve_connection(stream, shared).await {
                        debug!(%peer, error = %e, "connection ended with error");
                    }
                });
            }
            Err(e) => warn!(error = %e, "accept failed"),
        }
    }
}

/// How requests on a stream are turned into absolute URLs.
#[derive(Clone)]
struct ConnCtx {
    scheme: &'static str,
    /// Authority used when a request has neither an absolute target nor `Host`.
    authority: Option<String>,
    tls: Option<TlsInfo>,
    allow_connect: bool,
}

async fn serve_connection(stream: TcpStream, shared: Arc<Shared>) -> Result<()> {
    let mut first = [0u8; 1];
    if stream.peek(&mut first).await? == 0 {
        return Ok(());
    }
    if first[0] == 0x16 {
        intercept_tls(stream, None, shared).await
    } else {
        let ctx = ConnCtx {
            scheme: "http",
            authority: None,
            tls: None,
            allow_connect: true,
        };
        http_loop(Box::new(stream), ctx, shared).await.map(|_| ())
    }
}

type BoxIo = Box<dyn Io>;

/// Serves requests until the client closes. Returns the number served.
fn http_loop(
    stream: BoxIo,
    ctx: ConnCtx,
    shared: Arc<Shared>,
) -> Pin<Box<dyn std::future::Future<Output = Result<usize>> + Send>> {
    Box::pin(async move {
        let mut reader = BufReader::new(stream);
        let mut served = 0;
        loop {
            let req = match read_request(&mut reader).await {
                Ok(Some(r)) => r,
                Ok(None) => return Ok(served),
                Err(e) => {
                    let resp =
                        Response::new(400, Some("text/plain"), format!("{e}\n").into_bytes());
                    let _ = write_response(reader.get_mut(), &resp, false).await;
                    return Err(e);
                }
            };
            if req.head.method.eq_ignore_ascii_case("CONNECT") && ctx.allow_connect {
                let authority = req.head.target.clone();
                let w = reader.get_mut();
                w.write_all(b"HTTP/1.1 200 Connection Established\r\n\r\n")
                    .await?;
                w.flush().await?;
                let buffered = reader.buffer().to_vec();
                let inner = reader.into_inner();
                tunnel(Box::new(Rewind::new(buffered, inner)), authority, shared).await?;
                return Ok(served);
            }
            let keep_alive = req.head.keep_alive();
            let resp = match request_url(&req, &ctx) {
                Ok(url) => handle_request(&shared, req, url, ctx.tls.clone()).await,
                Err(e) => Response::new(400, Some("text/plain"), format!("{e}\n").into_bytes()),
            };
            served += 1;
            write_response(reader.get_mut(), &resp, keep_alive).await?;
            if !keep_alive {
                return Ok(served);
            }
        }
    })
}

fn request_url(req: &Request, ctx: &ConnCtx) -> Result<Url> {
    let t = &req.head.target;
    let raw = if t.starts_with("http://") || t.starts_with("https://") {
        t.clone()
    } else {
        let authority = req
            .head
            .headers
            .get("host")
            .map(str::to_string)
            .or_else(|| ctx.authority.clone())
            .ok_or_else(|| Error::http(format!("cannot resolve target {t:?} without Host")))?;
        let path = if t.starts_with('/') {
            t.clone()
        } else {
            format!("/{t}")
        };
        format!("{}://{}{}", ctx.scheme, authority, path)
    };
    let url = Url::parse(&raw).map_err(|e| Error::http(format!("bad target {raw:?}: {e}")))?;
    if url.host_str().is_none() {
        return Err(Error::http(format!("target {raw:?} has no host")));
    }
    Ok(url)
}

async fn tunnel(mut stream: BoxIo, authority: String, shared: Arc<Shared>) -> Result<()> {
    let mut first = [0u8; 1];
    let n = stream.read(&mut first).await?;
    if n == 0 {
        return Ok(());
    }
    let stream: BoxIo = Box::new(Rewind::new(first.to_vec(), stream));
    if first[0] == 0x16 {
        intercept_tls(stream, Some(authority), shared).await
    } else {
        let ctx = ConnCtx {
            scheme: "http",
            authority: Some(authority),
            tls: None,
            allow_connect: false,
        };
        http_loop(stream, ctx, shared).await.map(|_| ())
    }
}

fn split_authority(a: &str) -> (String, Option<u16>) {
    match a.rsplit_once(':') {
        Some((h, p)) if !h.ends_with(']') || a.starts_with('[') => match p.parse() {
            Ok(port) => (h.trim_matches(['[', ']']).to_ascii_lowercase(), Some(port)),
            Err(_) => (a.to_ascii_lowercase(), None),
        },
        _ => (a.trim_matches(['[', ']']).to_ascii_lowercase(), None),
    }
}

async fn intercept_tls<S: Io + 'static>(
    mut stream: S,
    connect_authority: Option<String>,
    shared: Arc<Shared>,
) -> Result<()> {
    let (hello, consumed) = read_client_hello(&mut stream).await?;
    let stream = Rewind::new(consumed, stream);
    let session = shared.session();
    let cert_mode = session
        .as_ref()
        .map(|s| s.cert_mode)
        .unwrap_or(CertMode::TrustedCa);
    let (connect_host, connect_port) = match &connect_authority {
        Some(a) => {
            let (h, p) = split_authority(a);
            (Some(h), p)
        }
        None => (None, None),
    };
    let hello = match hello {
        Ok(h) => h,
        Err(e) => {
            let host = connect_host.unwrap_or_else(|| "unknown.invalid".into());
            let mut f = new_flow(&session, "CONNECT", &format!("https://{host}/"));
            f.intercepted = false;
            f.error = Some(format!("unparseable ClientHello: {e}"));
            finish(&session, f);
            return Ok(());
        }
    };
    let host = hello
        .sni
        .clone()
        .or(connect_host)
        .unwrap_or_else(|| "unknown.invalid".into());
    let authority = match connect_port {
        Some(p) if p != 443 => format!("{host}:{p}"),
        _ => host.clone(),
    };
    let mut info = TlsInfo {
        version: version_label(hello.max_version()),
        ciphersuites_offered: hello.cipher_suites.clone(),
        cipher_negotiated: None,
        cert_mode,
        handshake_completed: false,
        sni: hello.sni.clone(),
    };
    let config = shared.ca.server_config(cert_mode, &host)?;
    match TlsAcceptor::from(config).accept(stream).await {
        Ok(tls) => {
            let (_, conn) = tls.get_ref();
            info.handshake_completed = true;
            info.cipher_negotiated = conn
                .negotiated_cipher_suite()
                .map(|s| CipherSuiteId(u16::from(s.suite())));
            if let Some(v) = conn.protocol_version() {
                info.version = rustls_version_label(v);
            }
            let ctx = ConnCtx {
                scheme: "https",
                authority: Some(authority.clone()),
                tls: Some(info.clone()),
                allow_connect: false,
            };
            let served = http_loop(Box::new(tls), ctx, shared.clone()).await;
            if matches!(served, Ok(0)) {
                let mut f = new_flow(&session, "CONNECT", &format!("https://{authority}/"));
                f.tls = Some(info);
                f.error = Some("TLS session carried no request".into());
                finish(&session, f);
            }
            served.map(|_| ())
        }
        Err(e) => {
            debug!(%host, %cert_mode, error = %e, "client refused interception");
            let mut f = new_flow(&session, "CONNECT", &format!("https://{authority}/"));
            f.intercepted = false;
            f.tls = Some(info);
            f.error = Some(format!("TLS handshake failed: {e}"));
            finish(&session, f);
            Ok(())
        }
    }
}

fn new_flow(session: &Option<Arc<ActiveSession>>, method: &str, url: &str) -> CapturedFlow {
    let (id, sid) = match session {
        Some(s) => (s.next_flow_id(), s.id.clone()),
        None => (String::new(), String::new()),
    };
    let mut f = CapturedFlow::new(&id, &sid, method, url);
    f.ts_start = now_ms();
    f.ts_end = f.ts_start;
    f
}

fn finish(session: &Option<Arc<ActiveSession>>, mut flow: CapturedFlow) {
    flow.ts_end = now_ms().max(flow.ts_start);
    match session {
        Some(s) => {
            if let Err(e) = s.log(&flow) {
                warn!(error = %e, "cannot append flow");
            }
        }
        None => debug!(url = %flow.url, "flow outside a session not logged"),
    }
}

async fn handle_request(shared: &Shared, req: Request, url: Url, tls: Option<TlsInfo>) -> Response {
    let session = shared.session();
    let method = req.head.method.to_ascii_uppercase();
    let mut flow = new_flow(&session, &method, url.as_str());
    flow.request_headers = req.head.headers.clone();
    flow.request_body = req.body.clone();
    flow.tls = tls;
    let host = url.host_str().unwrap_or_default().to_ascii_lowercase();

    let origin = if host == COLLECTOR_HOST {
        flow.cache = Some(CacheOutcome::Bypass);
        let r = collector::handle(
            session.as_deref(),
            &method,
            &url[url::Position::BeforePath..url::Position::AfterQuery],
            &req.body,
            shared.config.tripwire_js.as_deref(),
        );
        Some(r)
    } else {
        let mode = shared.mode();
        let cacheable = mode != Mode::Live && matches!(method.as_str(), "GET" | "HEAD");
        let key = RequestKey::new(&method, &url, &shared.config.volatile_params);
        let hit = if mode == Mode::Replay && cacheable {
            shared
                .cache
                .read()
                .expect("cache lock poisoned")
                .get(&key)
                .cloned()
        } else {
            None
        };
        match hit {
            Some(c) => {
                flow.cache = Some(CacheOutcome::Hit);
                let mut r = Response::new(c.status, None, c.body);
                r.head.headers = c.headers;
                Some(r)
            }
            None => match shared
                .config
                .upstreams
                .fetch(&method, &url, &req.head.headers, &req.body)
                .await
            {
                Ok(mut r) => {
                    r.head.headers = end_to_end(&r.head.headers);
                    flow.cache = Some(match (mode, cacheable) {
                        (Mode::Record, true) => {
                            shared.cache.write().expect("cache lock poisoned").record(
                                key,
                                CachedResponse {
                                    status: r.head.status,
                                    headers: r.head.headers.clone(),
                                    body: r.body.clone(),
                                },
                            );
                            CacheOutcome::Recorded
                        }
                        (Mode::Replay, true) => {
                            info!(url = %url, "replay cache miss");
                            CacheOutcome::Miss
                        }
                        _ => CacheOutcome::Bypass,
                    });
                    Some(r)
                }
                Err(e) => {
                    warn!(url = %url, error = %e, "upstream unreachable");
                    flow.error = Some(e.to_string());
                    None
                }
            },
        }
    };

    let resp = match origin {
        Some(mut r) => {
            let mut headers = end_to_end(&r.head.headers);
            let body = if shared.config.inject && host != COLLECTOR_HOST {
                inject::inject_response(&mut headers, std::mem::take(&mut r.body))
            } else {
                std::mem::take(&mut r.body)
            };
            flow.status = Some(r.head.status);
            flow.response_headers = headers.clone();
            flow.response_body = body.clone();
            r.head.headers = headers;
            r.body = body;
            r
        }
        None => Response::new(502, Some("text/plain"), b"upstream unreachable\n".to_vec()),
    };
    finish(&session, flow);
    resp
}
