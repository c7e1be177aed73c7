//! UDP handling: DNS is answered and logged, everything else is dropped and logged.

use std::net::{Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use gauntlet_core::flow::{CapturedFlow, Transport};
use tokio::net::UdpSocket;
use tracing::{debug, warn};

use super::{now_ms, Shared};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsQuery {
    pub id: u16,
    pub name: String,
    pub qtype: u16,
    /// Byte range of the question section.
    question_end: usize,
}

/// Parses a standard query with at least one question.
pub fn parse_dns_query(d: &[u8]) -> Option<DnsQuery> {
    if d.len() < 12 {
        return None;
    }
    let flags = u16::from_be_bytes([d[2], d[3]]);
    let qdcount = u16::from_be_bytes([d[4], d[5]]);
    if flags & 0x8000 != 0 || (flags >> 11) & 0xf != 0 || qdcount == 0 {
        return None;
    }
    let mut at = 12;
    let mut labels = Vec::new();
    loop {
        let len = usize::from(*d.get(at)?);
        at += 1;
        if len == 0 {
            break;
        }
        if len > 63 {
            return None;
        }
        let label = d.get(at..at + len)?;
        if !label
            .iter()
            .all(|c| c.is_ascii_alphanumeric() || *c == b'-' || *c == b'_')
        {
            return None;
        }
        labels.push(String::from_utf8_lossy(label).to_ascii_lowercase());
        at += len;
    }
    if labels.is_empty() {
        return None;
    }
    let qtype = u16::from_be_bytes([*d.get(at)?, *d.get(at + 1)?]);
    d.get(at + 2..at + 4)?;
    Some(DnsQuery {
        id: u16::from_be_bytes([d[0], d[1]]),
        name: labels.join("."),
        qtype,
        question_end: at + 4,
    })
}

/// Answers an A query with `ip`; other types get an empty answer.
pub fn dns_answer(query: &[u8], q: &DnsQuery, ip: Ipv4Addr) -> Vec<u8> {
    let a = q.qtype == 1;
    let mut out = Vec::with_capacity(q.question_end + 16);
    out.extend_from_slice(&q.id.to_be_bytes());
    out.extend_from_slice(&0x8180u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&u16::from(a).to_be_bytes());
    out.extend_from_slice(&[0, 0, 0, 0]);
    out.extend_from_slice(&query[12..q.question_end]);
    if a {
        out.extend_from_slice(&[0xc0, 0x0c, 0, 1, 0, 1]);
        out.extend_from_slice(&60u32.to_be_bytes());
        out.extend_from_slice(&4u16.to_be_bytes());
        out.extend_from_slice(&ip.octets());
    }
    out
}

pub(super) async fn serve(socket: UdpSocket, shared: Arc<Shared>) {
    let local = socket.local_addr().ok();
    let socket = Arc::new(socket);
    let mut buf = vec![0u8; 65535];
    loop {
        let (n, peer) = match socket.recv_from(&mut buf).await {
            Ok(x) => x,
            Err(e) => {
                warn!(error = %e, "udp receive failed");
                continue;
            }
        };
        let datagram = buf[..n].to_vec();
        let shared = shared.clone();
        let socket = socket.clone();
        tokio::spawn(async move {
            handle(&socket, &shared, &datagram, peer, local).await;
        });
    }
}

async fn handle(
    socket: &UdpSocket,
    shared: &Shared,
    datagram: &[u8],
    peer: SocketAddr,
    local: Option<SocketAddr>,
) {
    let ts_start = now_ms();
    let session = shared.session();
    let id = session
        .as_ref()
        .map(|s| s.next_flow_id())
        .unwrap_or_default();
    let sid = session.as_ref().map(|s| s.id.clone()).unwrap_or_default();
    let flow = match parse_dns_query(datagram) {
        Some(q) => {
            let reply = match shared.config.dns_upstream {
                Some(up) => relay(datagram, up).await,
                None => Some(dns_answer(datagram, &q, shared.config.dns_answer)),
            };
            if let Some(r) = &reply {
                if let Err(e) = socket.send_to(r, peer).await {
                    debug!(error = %e, "dns reply not sent");
                }
            }
            let mut f = CapturedFlow::new(&id, &sid, "DNS", &format!("http://{}/", q.name));
            f.transport = Transport::UdpDns;
            f.request_body = datagram.to_vec();
            f.response_body = reply.unwrap_or_default();
            f
        }
        None => {
            let dst = local
                .map(|a| a.to_string())
                .unwrap_or_else(|| "0.0.0.0".into());
            let mut f = CapturedFlow::new(&id, &sid, "UDP", &format!("http://{dst}/"));
            f.transport = Transport::DroppedUdp;
            f.intercepted = false;
            f.error = Some(format!(
                "{} byte datagram from {peer} dropped",
                datagram.len()
            ));
            f
        }
    };
    let mut flow = flow;
    flow.ts_start = ts_start;
    flow.ts_end = now_ms();
    match session {
        Some(s) => {
            if let Err(e) = s.log(&flow) {
                warn!(error = %e, "cannot log udp flow");
            }
        }
        None => debug!(url = %flow.url, "udp outside a session"),
    }
}

async fn relay(query: &[u8], upstream: SocketAddr) -> Option<Vec<u8>> {
    let bind: SocketAddr = if upstream.is_ipv4() {
        "0.0.0.0:0"
    } else {
        "[::]:0"
    }
    .parse()
    .ok()?;
    let sock = UdpSocket::bind(bind).await.ok()?;
    sock.send_to(query, upstream).await.ok()?;
    let mut buf = vec![0u8; 65535];
    let (n, _) = tokio::time::timeout(Duration::from_secs(2), sock.recv_from(&mut buf))
        .await
        .ok()?
        .ok()?;
    buf.truncate(n);
    Some(buf)
}
