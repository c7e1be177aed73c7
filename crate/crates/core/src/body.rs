//! Content-encoding and charset handling for message bodies.

use std::io::{Read, Write};

use flate2::read::{DeflateDecoder, GzDecoder, MultiGzDecoder, ZlibDecoder};
use flate2::write::{GzEncoder, ZlibEncoder};
use flate2::Compression;
use thiserror::Error;

use crate::flow::Headers;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BodyError {
    #[error("unsupported content-encoding `{0}`")]
    Unsupported(String),
    #[error("corrupt {0} stream")]
    Corrupt(&'static str),
}

/// Content codings listed in `content-encoding`, in application order.
pub fn codings(headers: &Headers) -> Vec<String> {
    headers
        .get_all("content-encoding")
        .flat_map(|v| v.split(','))
        .map(|c| c.trim().to_ascii_lowercase())
        .filter(|c| !c.is_empty() && c != "identity")
        .collect()
}

/// Removes every content coding. Unknown codings are an error.
pub fn decode_body(headers: &Headers, body: &[u8]) -> Result<Vec<u8>, BodyError> {
    let mut data = body.to_vec();
    for coding in codings(headers).iter().rev() {
        data = decode_one(coding, &data)?;
    }
    Ok(data)
}

fn decode_one(coding: &str, data: &[u8]) -> Result<Vec<u8>, BodyError> {
    let mut out = Vec::new();
    match coding {
        "gzip" | "x-gzip" => {
            MultiGzDecoder::new(data)
                .read_to_end(&mut out)
                .map_err(|_| BodyError::Corrupt("gzip"))?;
        }
        "deflate" => {
            if ZlibDecoder::new(data).read_to_end(&mut out).is_err() {
                out.clear();
                DeflateDecoder::new(data)
                    .read_to_end(&mut out)
                    .map_err(|_| BodyError::Corrupt("deflate"))?;
            }
        }
        other => return Err(BodyError::Unsupported(other.to_string())),
    }
    Ok(out)
}

/// Re-applies the codings of `headers` to a decoded body.
pub fn encode_body(headers: &Headers, body: &[u8]) -> Result<Vec<u8>, BodyError> {
    let mut data = body.to_vec();
    for coding in codings(headers) {
        data = match coding.as_str() {
            "gzip" | "x-gzip" => {
                let mut enc = GzEncoder::new(Vec::new(), Compression::default());
                enc.write_all(&data)
                    .map_err(|_| BodyError::Corrupt("gzip"))?;
                enc.finish().map_err(|_| BodyError::Corrupt("gzip"))?
            }
            "deflate" => {
                let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
                enc.write_all(&data)
                    .map_err(|_| BodyError::Corrupt("deflate"))?;
                enc.finish().map_err(|_| BodyError::Corrupt("deflate"))?
            }
            other => return Err(BodyError::Unsupported(other.to_string())),
        };
    }
    Ok(data)
}

/// Decodes bytes to text using the `content-type` charset, UTF-8 by default.
pub fn to_text(headers: &Headers, bytes: &[u8]) -> String {
    let enc = headers
        .charset()
        .and_then(|c| encoding_rs::Encoding::for_label(c.as_bytes()))
        .unwrap_or(encoding_rs::UTF_8);
    let (text, _, _) = enc.decode(bytes);
    text.into_owned()
}

/// Decoded text of a body, or the coding error.
pub fn decode_text(headers: &Headers, body: &[u8]) -> Result<String, BodyError> {
    decode_body(headers, body).map(|b| to_text(headers, &b))
}

/// True when the stream starts with the gzip magic.
pub fn looks_gzip(data: &[u8]) -> bool {
    data.starts_with(&[0x1f, 0x8b]) && GzDecoder::new(data).read_to_end(&mut Vec::new()).is_ok()
}
