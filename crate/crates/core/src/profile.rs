//! Device identity ground truth planted into each session.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiiType {
    Adid,
    AndroidId,
    Imei,
    Mac,
    Geolocation,
    AppList,
}

/// Exposure tier used by the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiiTier {
    NonResettable,
    Resettable,
    Other,
}

impl PiiType {
    pub const ALL: [PiiType; 6] = [
        PiiType::Adid,
        PiiType::AndroidId,
        PiiType::Imei,
        PiiType::Mac,
        PiiType::Geolocation,
        PiiType::AppList,
    ];

    pub fn is_resettable(self) -> bool {
        self == PiiType::Adid
    }

    pub fn tier(self) -> PiiTier {
        match self {
            PiiType::Adid => PiiTier::Resettable,
            PiiType::AndroidId | PiiType::Imei | PiiType::Mac => PiiTier::NonResettable,
            PiiType::Geolocation | PiiType::AppList => PiiTier::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PiiType::Adid => "adid",
            PiiType::AndroidId => "android_id",
            PiiType::Imei => "imei",
            PiiType::Mac => "mac",
            PiiType::Geolocation => "geolocation",
            PiiType::AppList => "app_list",
        }
    }
}

impl fmt::Display for PiiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// Resettable advertising id, a lowercase hyphenated UUID.
    pub adid: String,
    /// 16 lowercase hex digits.
    pub android_id: String,
    /// 15 digits with a Luhn check digit.
    pub imei: String,
    pub mac_device: String,
    pub mac_wifi: String,
    pub geolocation: GeoPoint,
    pub installed_apps: Vec<String>,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid("device profile", what.to_string()));
        if !is_uuid(&self.adid) {
            return bad("adid is not a UUID");
        }
        if self.android_id.len() != 16 || !self.android_id.bytes().all(|c| c.is_ascii_hexdigit()) {
            return bad("android_id is not 16 hex digits");
        }
        if self.imei.len() != 15
            || !self.imei.bytes().all(|c| c.is_ascii_digit())
            || !luhn_valid(&self.imei)
        {
            return bad("imei is not a 15-digit Luhn number");
        }
        for mac in [&self.mac_device, &self.mac_wifi] {
            if parse_mac(mac).is_none() {
                return bad("mac address malformed");
            }
        }
        let GeoPoint { lat, lon } = self.geolocation;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return bad("geolocation out of range");
        }
        if self.installed_apps.is_empty() || self.installed_apps.iter().any(|a| a.is_empty()) {
            return bad("installed_apps empty");
        }
        Ok(())
    }
}

fn is_uuid(s: &str) -> bool {
    let groups: Vec<&str> = s.split('-').collect();
    groups.len() == 5
        && groups
            .iter()
            .zip([8, 4, 4, 4, 12])
            .all(|(g, n)| g.len() == n && g.bytes().all(|c| c.is_ascii_hexdigit()))
}

pub fn luhn_check_digit(payload: &str) -> u8 {
    let sum: u32 = payload
        .bytes()
        .rev()
        .enumerate()
        .map(|(i, c)| {
            let d = (c - b'0') as u32;
            if i % 2 == 0 {
                let dd = d * 2;
                if dd > 9 {
                    dd - 9
                } else {
                    dd
                }
            } else {
                d
            }
        })
        .sum();
    ((10 - sum % 10) % 10) as u8
}

pub fn luhn_valid(number: &str) -> bool {
    let (payload, check) = number.split_at(number.len() - 1);
    check.as_bytes()[0] - b'0' == luhn_check_digit(payload)
}

/// Parses `aa:bb:cc:dd:ee:ff`, `aa-bb-...` or bare 12-hex forms.
pub fn parse_mac(s: &str) -> Option<[u8; 6]> {
    let hex: String = s.chars().filter(|c| *c != ':' && *c != '-').collect();
    if hex.len() != 12 {
        return None;
    }
    let bytes = hex::decode(hex).ok()?;
    bytes.try_into().ok()
}
