//! Minimal HTTP/1.1 message framing over async byte streams.

use gauntlet_core::flow::Headers;
use tokio::io::{
    AsyncBufRead, AsyncBufReadExt, AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt,
};

use crate::error::{Error, Result};

const MAX_HEAD: usize = 64 * 1024;
const MAX_HEADERS: usize = 128;
const MAX_BODY: usize = 64 * 1024 * 1024;

/// Byte stream usable as either side of a connection.
pub trait Io: AsyncRead + AsyncWrite + Unpin + Send {}
impl<T: AsyncRead + AsyncWrite + Unpin + Send> Io for T {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestHead {
    pub method: String,
    pub target: String,
    /// Minor version: 0 or 1.
    pub version: u8,
    pub headers: Headers,
}

impl RequestHead {
    pub fn keep_alive(&self) -> bool {
        let conn = self
            .headers
            .get("connection")
            .or_else(|| self.headers.get("proxy-connection"))
            .map(str::to_ascii_lowercase);
        match conn.as_deref() {
            Some(c) if c.contains("close") => false,
            Some(c) if c.contains("keep-alive") => true,
            _ => self.version == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseHead {
    pub status: u16,
    pub reason: String,
    pub headers: Headers,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub head: RequestHead,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub head: ResponseHead,
    pub body: Vec<u8>,
}

impl Response {
    pub fn new(status: u16, content_type: Option<&str>, body: Vec<u8>) -> Self {
        let mut headers = Headers::new();
        if let Some(ct) = content_type {
            headers.append("Content-Type", ct);
        }
        Response {
            head: ResponseHead {
                status,
                reason: reason(status).to_string(),
                headers,
            },
            body,
        }
    }
}

pub fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        204 => "No Content",
        301 => "Moved Permanently",
        302 => "Found",
        304 => "Not Modified",
        400 => "Bad Request",
        403 => "Forbidden",
        404 => "Not Found",
        405 => "Method Not Allowed",
        409 => "Conflict",
        502 => "Bad Gateway",
        503 => "Service Unavailable",
        504 => "Gateway Timeout",
        _ => "",
    }
}

/// Reads up to and including the blank line. `Ok(None)` on EOF before any byte.
async fn read_head<R: AsyncBufRead + Unpin>(r: &mut R) -> Result<Option<Vec<u8>>> {
    let mut head = Vec::new();
    loop {
        let n = r.read_until(b'\n', &mut head).await?;
        if n == 0 {
            if head.is_empty() {
                return Ok(None);
            }
            return Err(Error::http("connection closed inside message head"));
        }
        if head == b"\r\n" || head == b"\n" {
            // tolerate stray CRLF between pipelined messages
            head.clear();
            continue;
        }
        if head.ends_with(b"\r\n\r\n") || head.ends_with(b"\n\n") {
            return Ok(Some(head));
        }
        if head.len() > MAX_HEAD {
            return Err(Error::http("message head too large"));
        }
    }
}

fn to_headers(raw: &[httparse::Header<'_>]) -> Headers {
    let mut h = Headers::new();
    for x in raw {
        h.append(x.name, String::from_utf8_lossy(x.value).into_owned());
    }
    h
}

fn content_length(h: &Headers) -> Result<Option<usize>> {
    match h.get("content-length") {
        None => Ok(None),
        Some(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::http(format!("bad content-length {v:?}")))?;
            if n > MAX_BODY {
                return Err(Error::http("body too large"));
            }
            Ok(Some(n))
        }
    }
}

fn is_chunked(h: &Headers) -> bool {
    h.get_all("transfer-encoding").any(|v| {
        v.to_ascii_lowercase()
            .split(',')
            .any(|c| c.trim() == "chunked")
    })
}

async fn read_chunked<R: AsyncBufRead + Unpin>(r: &mut R) -> Result<Vec<u8>> {
    let mut body = Vec::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line).await? == 0 {
            return Err(Error::http("eof in chunk size"));
        }
        let size_text = line.trim().split(';').next().unwrap_or("");
        let size = usize::from_str_radix(size_text, 16)
            .map_err(|_| Error::http(format!("bad chunk size {size_text:?}")))?;
        if size == 0 {
            // trailers until blank line
            loop {
                let mut t = String::new();
                if r.read_line(&mut t).await? == 0 || t.trim().is_empty() {
                    return Ok(body);
                }
            }
        }
        if body.len() + size > MAX_BODY {
            return Err(Error::http("body too large"));
        }
        let start = body.len();
        body.resize(start + size, 0);
        r.read_exact(&mut body[start..]).await?;
        let mut crlf = String::new();
        r.read_line(&mut crlf).await?;
    }
}

pub async fn read_request<R: AsyncBufRead + Unpin>(r: &mut R) -> Result<Option<Request>> {
    let Some(raw) = read_head(r).await? else {
        return Ok(None);
    };
    let mut hs = [httparse::EMPTY_HEADER; MAX_HEADERS];
    let mut req = httparse::Request::new(&mut hs);
    match req.parse(&raw) {
        Ok(httparse::Status::Complete(_)) => {}
        Ok(httparse::Status::Partial) => return Err(Error::http("incomplete request head")),
        Err(e) => return Err(Error::http(format!("bad request head: {e}"))),
    }
    let head = RequestHead {
        method: req.method.unwrap_or_default().to_string(),
        target: req.path.unwrap_or_default().to_string(),
        version: req.version.unwrap_or(1),
        headers: to_headers(req.headers),
    };
    let body = if is_chunked(&head.headers) {
        read_chunked(r).await?
    } else if let Some(n) = content_length(&head.headers)? {
        let mut b = vec![0; n];
        r.read_exact(&mut b).await?;
        b
    } else {
        Vec::new()
    };
    Ok(Some(Request { head, body }))
}

/// Reads one response. `method` decides whether a body may follow.
pub async fn read_response<R: AsyncBufRead + Unpin>(r: &mut R, method: &str) -> Result<Response> {
    let raw = read_head(r)
        .await?
        .ok_or_else(|| Error::http("connection closed before response"))?;
    let mut hs = [httparse::EMPTY_HEADER; MAX_HEADERS];
    let mut resp = httparse::Response::new(&mut hs);
    match resp.parse(&raw) {
        Ok(httparse::Status::Complete(_)) => {}
        Ok(httparse::Status::Partial) => return Err(Error::http("incomplete response head")),
        Err(e) => return Err(Error::http(format!("bad response head: {e}"))),
    }
    let status = resp.code.unwrap_or(0);
    let head = ResponseHead {
        status,
        reason: resp.reason.unwrap_or_default().to_string(),
        headers: to_headers(resp.headers),
    };
    let bodiless = method.eq_ignore_ascii_case("HEAD")
        || (100..200).contains(&status)
        || status == 204
        || status == 304;
    let body = if bodiless {
        Vec::new()
    } else if is_chunked(&head.headers) {
        read_chunked(r).await?
    } else if let Some(n) = content_length(&head.headers)? {
        let mut b = vec![0; n];
        r.read_exact(&mut b).await?;
        b
    } else {
        let mut b = Vec::new();
        r.take(MAX_BODY as u64).read_to_end(&mut b).await?;
        b
    };
    Ok(Response { head, body })
}

const HOP_BY_HOP: [&str; 8] = [
    "connection",
    "proxy-connection",
    "keep-alive",
    "transfer-encoding",
    "te",
    "trailer",
    "upgrade",
    "proxy-authorization",
];

/// Drops hop-by-hop headers; bodies are always re-framed by length.
pub fn end_to_end(h: &Headers) -> Headers {
    let mut out = Headers::new();
    for (k, v) in h.iter() {
        if !HOP_BY_HOP.contains(&k.to_ascii_lowercase().as_str()) {
            out.append(k, v);
        }
    }
    out
}

fn put_headers(out: &mut Vec<u8>, headers: &Headers, body_len: usize, with_length: bool) {
    for (k, v) in headers.iter() {
        if k.eq_ignore_ascii_case("content-length") || k.eq_ignore_ascii_case("transfer-encoding") {
            continue;
        }
        out.extend_from_slice(format!("{k}: {v}\r\n").as_bytes());
    }
    if with_length {
        out.extend_from_slice(format!("Content-Length: {body_len}\r\n").as_bytes());
    }
}

pub fn serialize_request(head: &RequestHead, body: &[u8]) -> Vec<u8> {
    let mut out = format!(
        "{} {} HTTP/1.{}\r\n",
        head.method, head.target, head.version
    )
    .into_bytes();
    let with_length = !body.is_empty() || matches!(head.method.as_str(), "POST" | "PUT" | "PATCH");
    put_headers(&mut out, &head.headers, body.len(), with_length);
    out.extend_from_slice(b"\r\n");
    out.extend_from_slice(body);
    out
}

pub fn serialize_response(head: &ResponseHead, body: &[u8], keep_alive: bool) -> Vec<u8> {
    let mut out = format!("HTTP/1.1 {} {}\r\n", head.status, head.reason).into_bytes();
    let bodiless = (100..200).contains(&head.status) || head.status == 204 || head.status == 304;
    let mut headers = head.headers.clone();
    headers.remove("connection");
    headers.append(
        "Connection",
        if keep_alive { "keep-alive" } else { "close" },
    );
    put_headers(&mut out, &headers, body.len(), !bodiless);
    out.extend_from_slice(b"\r\n");
    if !bodiless {
        out.extend_from_slice(body);
    }
    out
}

pub async fn write_request<W: AsyncWrite + Unpin>(
    w: &mut W,
    head: &RequestHead,
    body: &[u8],
) -> Result<()> {
    w.write_all(&serialize_request(head, body)).await?;
    w.flush().await?;
    Ok(())
}

pub async fn write_response<W: AsyncWrite + Unpin>(
    w: &mut W,
    resp: &Response,
    keep_alive: bool,
) -> Result<()> {
    w.write_all(&serialize_response(&resp.head, &resp.body, keep_alive))
        .await?;
    w.flush().await?;
    Ok(())
}
