//! Hash helpers shared by the leak scanner and the DOM element identity.

use md5::Md5;
use serde::{Deserialize, Serialize};
use sha1::Sha1;
use sha2::{Digest, Sha224, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DigestKind {
    Md5,
    Sha1,
    Sha224,
    Sha256,
}

impl DigestKind {
    pub const ALL: [DigestKind; 4] = [
        DigestKind::Md5,
        DigestKind::Sha1,
        DigestKind::Sha224,
        DigestKind::Sha256,
    ];

    pub fn raw(self, data: &[u8]) -> Vec<u8> {
        match self {
            DigestKind::Md5 => Md5::digest(data).to_vec(),
            DigestKind::Sha1 => Sha1::digest(data).to_vec(),
            DigestKind::Sha224 => Sha224::digest(data).to_vec(),
            DigestKind::Sha256 => Sha256::digest(data).to_vec(),
        }
    }

    /// Lowercase hex digest.
    pub fn hex(self, data: &[u8]) -> String {
        hex::encode(self.raw(data))
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    DigestKind::Sha256.hex(data)
}

/// Digest of an element's attributes: SHA-256 over `name=value` pairs sorted
/// by name and joined with `\n`. Names are lowercased first.
pub fn attrs_digest<'a, I>(attrs: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut pairs: Vec<(String, &str)> = attrs
        .into_iter()
        .map(|(k, v)| (k.to_ascii_lowercase(), v))
        .collect();
    pairs.sort();
    let joined = pairs
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("\n");
    sha256_hex(joined.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_vectors() {
        assert_eq!(
            DigestKind::Md5.hex(b"abc"),
            "900150983cd24fb0d6963f7d28e17f72"
        );
        assert_eq!(
            DigestKind::Sha1.hex(b"abc"),
            "a9993e364706816aba3e25717850c26c9cd0d89d"
        );
        assert_eq!(
            DigestKind::Sha224.hex(b"abc"),
            "23097d223405d8228642a477bda255b32aadbce4bda0b3f7e36c9da7"
        );
        assert_eq!(
            DigestKind::Sha256.hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn attrs_digest_is_order_independent() {
        let a = attrs_digest([("src", "a.js"), ("async", "")]);
        let b = attrs_digest([("ASYNC", ""), ("src", "a.js")]);
        assert_eq!(a, b);
        assert_ne!(a, attrs_digest([("src", "b.js"), ("async", "")]));
    }
}
