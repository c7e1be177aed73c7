//! The gateway against a tiny in-process origin: injection, TLS modes,
//! the collector and UDP handling, all checked through the archived flows.

use std::io::Write;
use std::net::SocketAddr;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::Duration;

use gauntlet_core::archive::Archive;
use gauntlet_core::flow::{CapturedFlow, CertMode, Headers, Transport};
use gauntlet_core::COLLECTOR_HOST;
use gauntlet_testbed::ca::{crypto_provider, CertAuthority};
use gauntlet_testbed::gateway::inject::MARKER;
use gauntlet_testbed::gateway::upstream::Upstreams;
use gauntlet_testbed::gateway::{Gateway, GatewayConfig, Mode};
use gauntlet_testbed::http1::{read_request, write_response, Response};
use gauntlet_testbed::subjects::client::ProxyClient;
use rustls::pki_types::ServerName;
use rustls::{ClientConfig, RootCertStore};
use tempfile::TempDir;
use tokio::io::{AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream, UdpSocket};
use tokio_rustls::TlsConnector;
use url::Url;

const PAGE: &str = "<html><head><title>t</title></head><body>hi</body></html>";

fn gzip(bytes: &[u8]) -> Vec<u8> {
    let mut child = Command::new("gzip")
        .args(["-c", "-n"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(bytes).unwrap();
    child.wait_with_output().unwrap().stdout
}

fn gunzip(bytes: &[u8]) -> Vec<u8> {
    let mut child = Command::new("gzip")
        .args(["-d", "-c"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(bytes).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "gateway produced invalid gzip");
    out.stdout
}

/// Serves `/` as HTML, `/gz` as gzip HTML and echoes the forwarded scheme on `/proto`.
async fn origin() -> SocketAddr {
    let l = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = l.local_addr().unwrap();
    tokio::spawn(async move {
        loop {
            let Ok((s, _)) = l.accept().await else { return };
            tokio::spawn(async move {
                let mut r = BufReader::new(s);
                while let Ok(Some(req)) = read_request(&mut r).await {
                    let resp = match req.head.target.as_str() {
                        "/" => Response::new(200, Some("text/html"), PAGE.as_bytes().to_vec()),
                        "/gz" => {
                            let mut r = Response::new(
                                200,
                                Some("text/html; charset=utf-8"),
                                gzip(PAGE.as_bytes()),
                            );
                            r.head.headers.append("Content-Encoding", "gzip");
                            r
                        }
                        "/proto" => {
                            let p = req
                                .head
                                .headers
                                .get("X-Forwarded-Proto")
                                .unwrap_or("none")
                                .to_string();
                            Response::new(200, Some("text/plain"), p.into_bytes())
                        }
                        _ => Response::new(404, None, Vec::new()),
                    };
                    if write_response(r.get_mut(), &resp, true).await.is_err() {
                        return;
                    }
                }
            });
        }
    });
    addr
}

struct Rig {
    gw: Gateway,
    ca: Arc<CertAuthority>,
    archive: Archive,
    _dir: TempDir,
}

async fn rig(mode: CertMode) -> Rig {
    let ca = Arc::new(CertAuthority::ephemeral().unwrap());
    let mut cfg = GatewayConfig::new(
        "127.0.0.1:0".parse().unwrap(),
        Upstreams::to_default(origin().await),
    );
    cfg.udp_listen = Some("127.0.0.1:0".parse().unwrap());
    let gw = Gateway::start(cfg, ca.clone(), Mode::Live).await.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let archive = Archive::create(dir.path().join("a")).unwrap();
    gw.begin_session(&archive, "s", mode).unwrap();
    Rig {
        gw,
        ca,
        archive,
        _dir: dir,
    }
}

impl Rig {
    fn client(&self) -> ProxyClient {
        ProxyClient::new(
            self.gw.addr(),
            self.ca.root_der(CertMode::TrustedCa),
            false,
            Duration::from_secs(5),
        )
        .unwrap()
    }

    async fn flows(&self) -> Vec<CapturedFlow> {
        self.gw.finish_session(Duration::from_secs(2)).await;
        self.archive.read_flows("s").unwrap()
    }
}

async fn get(c: &ProxyClient, url: &str) -> gauntlet_testbed::Result<Response> {
    c.send("GET", &Url::parse(url).unwrap(), &Headers::new(), b"")
        .await
}

#[tokio::test]
async fn plain_http_gets_the_tripwire_and_is_logged() {
    let r = rig(CertMode::TrustedCa).await;
    let resp = get(&r.client(), "http://page.test/").await.unwrap();
    let body = String::from_utf8(resp.body).unwrap();
    assert_eq!(body.matches(MARKER).count(), 1);
    assert!(body.find(MARKER).unwrap() < body.find("<title>").unwrap());
    let flows = r.flows().await;
    assert_eq!(flows.len(), 1);
    assert_eq!(flows[0].url, "http://page.test/");
    assert_eq!(flows[0].status, Some(200));
    assert!(flows[0].tls.is_none());
}

#[tokio::test]
async fn gzip_html_is_injected_and_reencoded() {
    let r = rig(CertMode::TrustedCa).await;
    let resp = get(&r.client(), "http://page.test/gz").await.unwrap();
    assert_eq!(resp.head.headers.get("Content-Encoding"), Some("gzip"));
    let html = String::from_utf8(gunzip(&resp.body)).unwrap();
    assert_eq!(html.matches(MARKER).count(), 1);
    assert!(html.ends_with("</html>"));
}

#[tokio::test]
async fn trusted_https_is_intercepted() {
    let r = rig(CertMode::TrustedCa).await;
    let resp = get(&r.client(), "https://secure.test/proto").await.unwrap();
    assert_eq!(resp.body, b"https");
    let flows = r.flows().await;
    let f = flows
        .iter()
        .find(|f| f.url == "https://secure.test/proto")
        .unwrap();
    let tls = f.tls.as_ref().unwrap();
    assert!(tls.handshake_completed);
    assert_eq!(tls.cert_mode, CertMode::TrustedCa);
    assert_eq!(tls.sni.as_deref(), Some("secure.test"));
    assert!(tls.cipher_negotiated.is_some());
    assert!(tls
        .ciphersuites_offered
        .contains(tls.cipher_negotiated.as_ref().unwrap()));
}

#[tokio::test]
async fn untrusted_ca_handshake_failure_is_logged() {
    let r = rig(CertMode::UntrustedCa).await;
    assert!(get(&r.client(), "https://secure.test/").await.is_err());
    let flows = r.flows().await;
    assert_eq!(flows.len(), 1);
    let f = &flows[0];
    assert_eq!(f.url, "https://secure.test/");
    assert!(f.status.is_none());
    assert!(!f.intercepted);
    let tls = f.tls.as_ref().unwrap();
    assert!(!tls.handshake_completed);
    assert_eq!(tls.cert_mode, CertMode::UntrustedCa);
    assert!(f.error.as_deref().unwrap().contains("handshake"));
}

#[tokio::test]
async fn accepting_client_is_served_under_untrusted_ca() {
    let r = rig(CertMode::UntrustedCa).await;
    let c = ProxyClient::new(
        r.gw.addr(),
        r.ca.root_der(CertMode::TrustedCa),
        true,
        Duration::from_secs(5),
    )
    .unwrap();
    let resp = get(&c, "https://secure.test/").await.unwrap();
    assert_eq!(resp.head.status, 200);
    let flows = r.flows().await;
    let tls = flows[0].tls.as_ref().unwrap();
    assert!(tls.handshake_completed);
    assert_eq!(tls.cert_mode, CertMode::UntrustedCa);
}

#[tokio::test]
async fn transparent_tls_uses_sni() {
    let r = rig(CertMode::TrustedCa).await;
    let mut roots = RootCertStore::empty();
    roots.add(r.ca.root_der(CertMode::TrustedCa)).unwrap();
    let cfg = ClientConfig::builder_with_provider(crypto_provider())
        .with_safe_default_protocol_versions()
        .unwrap()
        .with_root_certificates(roots)
        .with_no_client_auth();
    let tcp = TcpStream::connect(r.gw.addr()).await.unwrap();
    let mut tls = TlsConnector::from(Arc::new(cfg))
        .connect(ServerName::try_from("direct.test").unwrap(), tcp)
        .await
        .unwrap();
    tls.write_all(b"GET /proto HTTP/1.1\r\nHost: direct.test\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut out = Vec::new();
    let _ = tls.read_to_end(&mut out).await;
    let text = String::from_utf8_lossy(&out);
    assert!(text.starts_with("HTTP/1.1 200"), "{text}");
    assert!(text.ends_with("https"));
    let flows = r.flows().await;
    assert_eq!(flows[0].url, "https://direct.test/proto");
    assert_eq!(
        flows[0].tls.as_ref().unwrap().sni.as_deref(),
        Some("direct.test")
    );
}

#[tokio::test]
async fn collector_stores_reports_and_keeps_malformed_ones() {
    let r = rig(CertMode::TrustedCa).await;
    let c = r.client();
    let url = Url::parse(&format!("http://{COLLECTOR_HOST}/report")).unwrap();
    let good = br#"{"page_url":"http://page.test/","elements":[{"tag":"script","url":"http://cdn.test/a.js","attrs_digest":"ab"}],"ts":7}"#;
    let resp = c.send("POST", &url, &Headers::new(), good).await.unwrap();
    assert_eq!(resp.head.status, 204);
    let resp = c
        .send("POST", &url, &Headers::new(), b"{not json")
        .await
        .unwrap();
    assert_eq!(resp.head.status, 400);
    let script = get(&c, &format!("http://{COLLECTOR_HOST}/tripwire.js"))
        .await
        .unwrap();
    assert_eq!(script.head.status, 200);
    r.gw.end_session();
    let snaps = r.archive.read_snapshots("s").unwrap();
    assert_eq!(snaps.len(), 1);
    assert_eq!(snaps[0].page_url, "http://page.test/");
    assert_eq!(snaps[0].elements.len(), 1);
    assert_eq!(r.archive.malformed_count("s").unwrap(), 1);
}

fn dns_query(name: &str) -> Vec<u8> {
    let mut q = vec![0xab, 0xcd, 0x01, 0x00, 0, 1, 0, 0, 0, 0, 0, 0];
    for label in name.split('.') {
        q.push(label.len() as u8);
        q.extend_from_slice(label.as_bytes());
    }
    q.extend_from_slice(&[0, 0, 1, 0, 1]);
    q
}

#[tokio::test]
async fn udp_dns_is_answered_and_other_datagrams_dropped() {
    let r = rig(CertMode::TrustedCa).await;
    let gw_udp = r.gw.udp_addr().unwrap();
    let sock = UdpSocket::bind("127.0.0.1:0").await.unwrap();
    sock.send_to(&dns_query("tracker.example.com"), gw_udp)
        .await
        .unwrap();
    let mut buf = [0u8; 512];
    let (n, _) = tokio::time::timeout(Duration::from_secs(2), sock.recv_from(&mut buf))
        .await
        .unwrap()
        .unwrap();
    let reply = &buf[..n];
    assert_eq!(&reply[..2], &[0xab, 0xcd]);
    assert!(reply[2] & 0x80 != 0, "QR bit");
    assert_eq!(u16::from_be_bytes([reply[6], reply[7]]), 1, "one answer");
    assert_eq!(&reply[n - 4..], &[127, 0, 0, 1]);

    sock.send_to(b"\x17\xfe\xfd quic-ish", gw_udp)
        .await
        .unwrap();
    tokio::time::sleep(Duration::from_millis(200)).await;
    let flows = r.flows().await;
    let dns = flows
        .iter()
        .find(|f| f.transport == Transport::UdpDns)
        .unwrap();
    assert_eq!(dns.url, "http://tracker.example.com/");
    let dropped = flows
        .iter()
        .find(|f| f.transport == Transport::DroppedUdp)
        .unwrap();
    assert!(!dropped.intercepted);
    assert!(dropped.error.is_some());
}
