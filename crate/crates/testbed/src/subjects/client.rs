//! Minimal HTTP client that reaches every origin through the gateway's
//! explicit proxy port, the way a device configured with a proxy does.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use gauntlet_core::flow::Headers;
use rustls::client::danger::{HandshakeSignatureValid, ServerCertVerified, ServerCertVerifier};
use rustls::crypto::{verify_tls12_signature, verify_tls13_signature, CryptoProvider};
use rustls::pki_types::{CertificateDer, ServerName, UnixTime};
use rustls::{ClientConfig, DigitallySignedStruct, RootCertStore, SignatureScheme};
use tokio::io::{AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;
use tokio_rustls::TlsConnector;
use url::Url;

use crate::ca::crypto_provider;
use crate::error::{Error, Result};
use crate::http1::{read_response, write_request, Io, RequestHead, Response};

/// Accepts any certificate chain. Handshake signatures are still checked,
/// so only the trust decision is skipped.
#[derive(Debug)]
struct AcceptAnyCert(Arc<CryptoProvider>);

impl ServerCertVerifier for AcceptAnyCert {
    fn verify_server_cert(
        &self,
        _end_entity: &CertificateDer<'_>,
        _intermediates: &[CertificateDer<'_>],
        _server_name: &ServerName<'_>,
        _ocsp: &[u8],
        _now: UnixTime,
    ) -> Result<ServerCertVerified, rustls::Error> {
        Ok(ServerCertVerified::assertion())
    }

    fn verify_tls12_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        verify_tls12_signature(
            message,
            cert,
            dss,
            &self.0.signature_verification_algorithms,
        )
    }

    fn verify_tls13_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        verify_tls13_signature(
            message,
            cert,
            dss,
            &self.0.signature_verification_algorithms,
        )
    }

    fn supported_verify_schemes(&self) -> Vec<SignatureScheme> {
        self.0.signature_verification_algorithms.supported_schemes()
    }
}

#[derive(Clone)]
pub struct ProxyClient {
    proxy: SocketAddr,
    tls: TlsConnector,
    timeout: Duration,
}

impl ProxyClient {
    /// `trusted_root` is the only anchor unless `accept_any_cert` is set.
    pub fn new(
        proxy: SocketAddr,
        trusted_root: CertificateDer<'static>,
        accept_any_cert: bool,
        timeout: Duration,
    ) -> Result<Self> {
        let provider = crypto_provider();
        let builder = ClientConfig::builder_with_provider(provider.clone())
            .with_safe_default_protocol_versions()?;
        let mut config = if accept_any_cert {
            builder
                .dangerous()
                .with_custom_certificate_verifier(Arc::new(AcceptAnyCert(provider)))
                .with_no_client_auth()
        } else {
            let mut roots = RootCertStore::empty();
            roots.add(trusted_root)?;
            builder.with_root_certificates(roots).with_no_client_auth()
        };
        config.alpn_protocols = vec![b"http/1.1".to_vec()];
        Ok(ProxyClient {
            proxy,
            tls: TlsConnector::from(Arc::new(config)),
            timeout,
        })
    }

    pub async fn send(
        &self,
        method: &str,
        url: &Url,
        headers: &Headers,
        body: &[u8],
    ) -> Result<Response> {
        tokio::time::timeout(self.timeout, self.send_inner(method, url, headers, body))
            .await
            .map_err(|_| Error::Timeout(format!("{method} {url}")))?
    }

    async fn send_inner(
        &self,
        method: &str,
        url: &Url,
        headers: &Headers,
        body: &[u8],
    ) -> Result<Response> {
        let host = url
            .host_str()
            .ok_or_else(|| Error::http(format!("{url}: no host")))?
            .to_string();
        let port = url.port_or_known_default().unwrap_or(80);
        let authority = &url[url::Position::BeforeHost..url::Position::AfterPort];
        let mut h = headers.clone();
        h.set("Host", authority);
        h.set("Connection", "close");
        let mut stream = TcpStream::connect(self.proxy).await?;
        match url.scheme() {
            "http" => {
                let head = RequestHead {
                    method: method.to_string(),
                    target: url.as_str().to_string(),
                    version: 1,
                    headers: h,
                };
                exchange(stream, &head, body, method).await
            }
            "https" => {
                let connect =
                    format!("CONNECT {host}:{port} HTTP/1.1\r\nHost: {host}:{port}\r\n\r\n");
                stream.write_all(connect.as_bytes()).await?;
                let status = read_connect_reply(&mut stream).await?;
                if status != 200 {
                    return Err(Error::http(format!(
                        "proxy refused CONNECT {host}:{port} with {status}"
                    )));
                }
                let name = ServerName::try_from(host.clone())
                    .map_err(|e| Error::http(format!("{host}: {e}")))?;
                let tls = self.tls.connect(name, stream).await?;
                let head = RequestHead {
                    method: method.to_string(),
                    target: url[url::Position::BeforePath..url::Position::AfterQuery].to_string(),
                    version: 1,
                    headers: h,
                };
                exchange(tls, &head, body, method).await
            }
            s => Err(Error::http(format!("unsupported scheme {s}"))),
        }
    }
}

async fn exchange<S: Io>(
    mut stream: S,
    head: &RequestHead,
    body: &[u8],
    method: &str,
) -> Result<Response> {
    write_request(&mut stream, head, body).await?;
    let mut r = BufReader::new(stream);
    read_response(&mut r, method).await
}

/// Reads the proxy's CONNECT reply byte by byte so nothing of the tunnel
/// is consumed.
async fn read_connect_reply(s: &mut TcpStream) -> Result<u16> {
    let mut head = Vec::new();
    while !head.ends_with(b"\r\n\r\n") {
        if head.len() > 8192 {
            return Err(Error::http("CONNECT reply too long"));
        }
        let b = s.read_u8().await?;
        head.push(b);
    }
    let line = String::from_utf8_lossy(&head);
    line.split_whitespace()
        .nth(1)
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| Error::http(format!("bad CONNECT reply {:?}", line.lines().next())))
}
