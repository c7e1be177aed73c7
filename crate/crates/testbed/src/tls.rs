//! ClientHello inspection ahead of TLS termination.

use std::io;
use std::pin::Pin;
use std::task::{Context, Poll};

use gauntlet_core::flow::CipherSuiteId;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, ReadBuf};

const HANDSHAKE: u8 = 0x16;
const CLIENT_HELLO: u8 = 0x01;
const EXT_SNI: u16 = 0x0000;
const EXT_SUPPORTED_VERSIONS: u16 = 0x002b;
const MAX_HELLO: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientHello {
    pub legacy_version: u16,
    pub cipher_suites: Vec<CipherSuiteId>,
    pub sni: Option<String>,
    pub supported_versions: Vec<u16>,
}

impl ClientHello {
    pub fn max_version(&self) -> u16 {
        self.supported_versions
            .iter()
            .copied()
            .filter(|v| v & 0x0f0f == 0x0303 || *v <= 0x0304)
            .max()
            .unwrap_or(self.legacy_version)
    }
}

pub fn version_label(v: u16) -> String {
    match v {
        0x0300 => "SSLv3".into(),
        0x0301 => "TLSv1.0".into(),
        0x0302 => "TLSv1.1".into(),
        0x0303 => "TLSv1.2".into(),
        0x0304 => "TLSv1.3".into(),
        other => format!("0x{other:04x}"),
    }
}

pub fn rustls_version_label(v: rustls::ProtocolVersion) -> String {
    version_label(u16::from(v))
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum HelloError {
    #[error("not a TLS handshake record")]
    NotTls,
    #[error("handshake is not a ClientHello")]
    NotClientHello,
    #[error("truncated ClientHello")]
    Truncated,
}

struct Cursor<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HelloError> {
        let s = self
            .b
            .get(self.at..self.at + n)
            .ok_or(HelloError::Truncated)?;
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, HelloError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, HelloError> {
        let s = self.take(2)?;
        Ok(u16::from_be_bytes([s[0], s[1]]))
    }
    fn u24(&mut self) -> Result<usize, HelloError> {
        let s = self.take(3)?;
        Ok((usize::from(s[0]) << 16) | (usize::from(s[1]) << 8) | usize::from(s[2]))
    }
}

/// Concatenates handshake fragments from consecutive records. Returns the
/// handshake bytes and the number of record bytes consumed, or `Truncated`
/// when more input is needed.
fn reassemble(records: &[u8]) -> Result<(Vec<u8>, usize), HelloError> {
    let mut hs = Vec::new();
    let mut at = 0;
    loop {
        let hdr = records.get(at..at + 5).ok_or(HelloError::Truncated)?;
        if hdr[0] != HANDSHAKE {
            return Err(HelloError::NotTls);
        }
        let len = usize::from(u16::from_be_bytes([hdr[3], hdr[4]]));
        let frag = records
            .get(at + 5..at + 5 + len)
            .ok_or(HelloError::Truncated)?;
        hs.extend_from_slice(frag);
        at += 5 + len;
        if hs.len() >= 4 {
            if hs[0] != CLIENT_HELLO {
                return Err(HelloError::NotClientHello);
            }
            let body = (usize::from(hs[1]) << 16) | (usize::from(hs[2]) << 8) | usize::from(hs[3]);
            if hs.len() >= 4 + body {
                hs.truncate(4 + body);
                return Ok((hs, at));
            }
        }
    }
}

/// Parses a ClientHello from the raw record bytes at the start of a connection.
pub fn parse_client_hello(records: &[u8]) -> Result<ClientHello, HelloError> {
    let (hs, _) = reassemble(records)?;
    let mut c = Cursor { b: &hs, at: 0 };
    c.u8()?;
    let len = c.u24()?;
    let mut c = Cursor {
        b: c.take(len)?,
        at: 0,
    };
    let legacy_version = c.u16()?;
    c.take(32)?;
    let sid = usize::from(c.u8()?);
    c.take(sid)?;
    let cs_len = usize::from(c.u16()?);
    let cs = c.take(cs_len)?;
    let cipher_suites = cs
        .chunks_exact(2)
        .map(|p| CipherSuiteId(u16::from_be_bytes([p[0], p[1]])))
        .collect();
    let comp = usize::from(c.u8()?);
    c.take(comp)?;
    let mut hello = ClientHello {
        legacy_version,
        cipher_suites,
        sni: None,
        supported_versions: Vec::new(),
    };
    if c.at == c.b.len() {
        return Ok(hello);
    }
    let ext_len = usize::from(c.u16()?);
    let mut e = Cursor {
        b: c.take(ext_len)?,
        at: 0,
    };
    while e.at < e.b.len() {
        let ty = e.u16()?;
        let len = usize::from(e.u16()?);
        let data = e.take(len)?;
        let mut d = Cursor { b: data, at: 0 };
        match ty {
            EXT_SNI => {
                let list_len = usize::from(d.u16()?);
                let mut l = Cursor {
                    b: d.take(list_len)?,
                    at: 0,
                };
                while l.at < l.b.len() {
                    let kind = l.u8()?;
                    let n = usize::from(l.u16()?);
                    let name = l.take(n)?;
                    if kind == 0 && hello.sni.is_none() {
                        hello.sni = Some(String::from_utf8_lossy(name).to_ascii_lowercase());
                    }
                }
            }
            EXT_SUPPORTED_VERSIONS => {
                let n = usize::from(d.u8()?);
                hello.supported_versions = d
                    .take(n)?
                    .chunks_exact(2)
                    .map(|p| u16::from_be_bytes([p[0], p[1]]))
                    .collect();
            }
            _ => {}
        }
    }
    Ok(hello)
}

/// Reads whole records from `r` until a complete ClientHello is buffered.
/// Returns the parsed hello and every byte read.
pub async fn read_client_hello<R: AsyncRead + Unpin>(
    r: &mut R,
) -> io::Result<(Result<ClientHello, HelloError>, Vec<u8>)> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    loop {
        match reassemble(&buf) {
            Err(HelloError::Truncated) if buf.len() < MAX_HELLO => {}
            _ => return Ok((parse_client_hello(&buf), buf)),
        }
        let n = r.read(&mut chunk).await?;
        if n == 0 {
            return Ok((Err(HelloError::Truncated), buf));
        }
        buf.extend_from_slice(&chunk[..n]);
    }
}

/// A stream that replays already-consumed bytes before reading further.
pub struct Rewind<S> {
    prefix: Vec<u8>,
    at: usize,
    inner: S,
}

impl<S> Rewind<S> {
    pub fn new(prefix: Vec<u8>, inner: S) -> Self {
        Rewind {
            prefix,
            at: 0,
            inner,
        }
    }
}

impl<S: AsyncRead + Unpin> AsyncRead for Rewind<S> {
    fn poll_read(
        mut self: Pin<&mut Self>,
        cx: &mut Context<'_>,
        buf: &mut ReadBuf<'_>,
    ) -> Poll<io::Result<()>> {
        if self.at < self.prefix.len() {
            let n = (self.prefix.len() - self.at).min(buf.remaining());
            let start = self.at;
            buf.put_slice(&self.prefix[start..start + n]);
            self.at += n;
            return Poll::Ready(Ok(()));
        }
        Pin::new(&mut self.inner).poll_read(cx, buf)
    }
}

impl<S: AsyncWrite + Unpin> AsyncWrite for Rewind<S> {
    fn poll_write(
        mut self: Pin<&mut Self>,
        cx: &mut Context<'_>,
        buf: &[u8],
    ) -> Poll<io::Result<usize>> {
        Pin::new(&mut self.inner).poll_write(cx, buf)
    }
    fn poll_flush(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<io::Result<()>> {
        Pin::new(&mut self.inner).poll_flush(cx)
    }
    fn poll_shutdown(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<io::Result<()>> {
        Pin::new(&mut self.inner).poll_shutdown(cx)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// A hand-assembled TLS 1.2 ClientHello.
    pub fn hello_bytes(sni: Option<&str>, suites: &[u16], versions: &[u16]) -> Vec<u8> {
        let mut body = vec![0x03, 0x03];
        body.extend_from_slice(&[7u8; 32]);
        body.push(0);
        body.extend_from_slice(&((suites.len() * 2) as u16).to_be_bytes());
        for s in suites {
            body.extend_from_slice(&s.to_be_bytes());
        }
        body.extend_from_slice(&[1, 0]);
        let mut exts = Vec::new();
        if let Some(name) = sni {
            let mut list = vec![0u8];
            list.extend_from_slice(&(name.len() as u16).to_be_bytes());
            list.extend_from_slice(name.as_bytes());
            let mut data = (list.len() as u16).to_be_bytes().to_vec();
            data.extend_from_slice(&list);
            exts.extend_from_slice(&0u16.to_be_bytes());
            exts.extend_from_slice(&(data.len() as u16).to_be_bytes());
            exts.extend_from_slice(&data);
        }
        if !versions.is_empty() {
            let mut data = vec![(versions.len() * 2) as u8];
            for v in versions {
                data.extend_from_slice(&v.to_be_bytes());
            }
            exts.extend_from_slice(&EXT_SUPPORTED_VERSIONS.to_be_bytes());
            exts.extend_from_slice(&(data.len() as u16).to_be_bytes());
            exts.extend_from_slice(&data);
        }
        body.extend_from_slice(&(exts.len() as u16).to_be_bytes());
        body.extend_from_slice(&exts);
        let mut hs = vec![CLIENT_HELLO];
        hs.extend_from_slice(&(body.len() as u32).to_be_bytes()[1..]);
        hs.extend_from_slice(&body);
        let mut rec = vec![HANDSHAKE, 0x03, 0x01];
        rec.extend_from_slice(&(hs.len() as u16).to_be_bytes());
        rec.extend_from_slice(&hs);
        rec
    }

    #[test]
    fn parses_sni_suites_and_versions() {
        let b = hello_bytes(
            Some("Secure.Test"),
            &[0x1301, 0xc02f, 0x0005],
            &[0x0304, 0x0303],
        );
        let h = parse_client_hello(&b).unwrap();
        assert_eq!(h.sni.as_deref(), Some("secure.test"));
        assert_eq!(
            h.cipher_suites,
            vec![
                CipherSuiteId(0x1301),
                CipherSuiteId(0xc02f),
                CipherSuiteId(0x0005)
            ]
        );
        assert_eq!(version_label(h.max_version()), "TLSv1.3");
        let plain = parse_client_hello(&hello_bytes(None, &[0x002f], &[])).unwrap();
        assert_eq!(plain.sni, None);
        assert_eq!(version_label(plain.max_version()), "TLSv1.2");
    }

    #[test]
    fn fragmented_and_truncated() {
        let b = hello_bytes(Some("a.test"), &[0x1301], &[]);
        // split the handshake across two records
        let hs = &b[5..];
        let (first, second) = hs.split_at(20);
        let mut rec = vec![HANDSHAKE, 3, 1];
        rec.extend_from_slice(&(first.len() as u16).to_be_bytes());
        rec.extend_from_slice(first);
        rec.extend_from_slice(&[HANDSHAKE, 3, 1]);
        rec.extend_from_slice(&(second.len() as u16).to_be_bytes());
        rec.extend_from_slice(second);
        assert_eq!(
            parse_client_hello(&rec).unwrap().sni.as_deref(),
            Some("a.test")
        );
        assert_eq!(
            parse_client_hello(&b[..b.len() - 3]),
            Err(HelloError::Truncated)
        );
        assert_eq!(
            parse_client_hello(b"GET / HTTP/1.1\r\n"),
            Err(HelloError::NotTls)
        );
    }

    #[tokio::test]
    async fn rewind_replays_prefix() {
        let b = hello_bytes(Some("a.test"), &[0x1301], &[]);
        let mut data = b.clone();
        data.extend_from_slice(b"rest");
        let mut r = &data[..];
        let (hello, consumed) = read_client_hello(&mut r).await.unwrap();
        assert_eq!(hello.unwrap().sni.as_deref(), Some("a.test"));
        let mut rw = Rewind::new(consumed, r);
        let mut all = Vec::new();
        rw.read_to_end(&mut all).await.unwrap();
        assert_eq!(all, data);
    }
}
