use serde::{Deserialize, Serialize};
use url::Url;

use crate::psl;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceType {
    Script,
    Image,
    Stylesheet,
    Object,
    Xmlhttprequest,
    Subdocument,
    Ping,
    Media,
    Font,
    Websocket,
    Webrtc,
    Other,
    Popup,
    Document,
}

impl ResourceType {
    pub const ALL: [ResourceType; 14] = [
        ResourceType::Script,
        ResourceType::Image,
        ResourceType::Stylesheet,
        ResourceType::Object,
        ResourceType::Xmlhttprequest,
        ResourceType::Subdocument,
        ResourceType::Ping,
        ResourceType::Media,
        ResourceType::Font,
        ResourceType::Websocket,
        ResourceType::Webrtc,
        ResourceType::Other,
        ResourceType::Popup,
        ResourceType::Document,
    ];

    pub(crate) fn bit(self) -> u16 {
        1 << (self as u16)
    }

    /// Option name as written in filter lists, including the common aliases.
    pub fn from_option(name: &str) -> Option<ResourceType> {
        Some(match name {
            "script" => ResourceType::Script,
            "image" => ResourceType::Image,
            "stylesheet" | "css" => ResourceType::Stylesheet,
            "object" | "object-subrequest" => ResourceType::Object,
            "xmlhttprequest" | "xhr" => ResourceType::Xmlhttprequest,
            "subdocument" | "frame" => ResourceType::Subdocument,
            "ping" | "beacon" => ResourceType::Ping,
            "media" => ResourceType::Media,
            "font" => ResourceType::Font,
            "websocket" => ResourceType::Websocket,
            "webrtc" => ResourceType::Webrtc,
            "other" => ResourceType::Other,
            "popup" => ResourceType::Popup,
            "document" | "doc" => ResourceType::Document,
            _ => return None,
        })
    }

    pub fn option_name(self) -> &'static str {
        match self {
            ResourceType::Script => "script",
            ResourceType::Image => "image",
            ResourceType::Stylesheet => "stylesheet",
            ResourceType::Object => "object",
            ResourceType::Xmlhttprequest => "xmlhttprequest",
            ResourceType::Subdocument => "subdocument",
            ResourceType::Ping => "ping",
            ResourceType::Media => "media",
            ResourceType::Font => "font",
            ResourceType::Websocket => "websocket",
            ResourceType::Webrtc => "webrtc",
            ResourceType::Other => "other",
            ResourceType::Popup => "popup",
            ResourceType::Document => "document",
        }
    }

    /// Best-effort type for a captured request, from `Sec-Fetch-Dest` when
    /// present, otherwise from the path extension.
    pub fn infer(fetch_dest: Option<&str>, url: &str) -> ResourceType {
        if let Some(dest) = fetch_dest {
            match dest.trim().to_ascii_lowercase().as_str() {
                "script" | "worker" | "sharedworker" | "serviceworker" => {
                    return ResourceType::Script
                }
                "image" => return ResourceType::Image,
                "style" => return ResourceType::Stylesheet,
                "iframe" | "frame" => return ResourceType::Subdocument,
                "document" => return ResourceType::Document,
                "font" => return ResourceType::Font,
                "audio" | "video" | "track" => return ResourceType::Media,
                "object" | "embed" => return ResourceType::Object,
                "empty" => return ResourceType::Xmlhttprequest,
                _ => {}
            }
        }
        let path = Url::parse(url)
            .map(|u| u.path().to_ascii_lowercase())
            .unwrap_or_default();
        let ext = path.rsplit_once('.').map(|(_, e)| e).unwrap_or("");
        match ext {
            "js" | "mjs" => ResourceType::Script,
            "css" => ResourceType::Stylesheet,
            "png" | "gif" | "jpg" | "jpeg" | "webp" | "svg" | "ico" | "bmp" | "avif" => {
                ResourceType::Image
            }
            "woff" | "woff2" | "ttf" | "otf" | "eot" => ResourceType::Font,
            "mp4" | "webm" | "mp3" | "ogg" | "m3u8" => ResourceType::Media,
            "html" | "htm" => ResourceType::Subdocument,
            _ => ResourceType::Other,
        }
    }
}

/// A request as seen by the matcher.
#[derive(Debug, Clone)]
pub struct RequestContext {
    pub url: String,
    /// Host of the initiating page; `domain=` options are matched against it.
    pub page_host: String,
    /// eTLD+1 of the initiating page.
    pub page_origin: String,
    pub resource_type: ResourceType,
    pub is_third_party: bool,
    pub(crate) url_lower: String,
    pub(crate) host: String,
    pub(crate) host_start: usize,
    pub(crate) host_end: usize,
}

impl RequestContext {
    /// `page` is either the initiating page URL or its bare hostname.
    pub fn new(url: &str, page: &str, resource_type: ResourceType) -> Result<Self> {
        let parsed =
            Url::parse(url).map_err(|e| Error::invalid("request url", format!("{url}: {e}")))?;
        let host = parsed
            .host_str()
            .ok_or_else(|| Error::invalid("request url", format!("{url}: no host")))?
            .trim_end_matches('.')
            .to_ascii_lowercase();
        let page_host = match Url::parse(page) {
            Ok(p) if p.host_str().is_some() => p.host_str().unwrap_or_default().to_string(),
            _ => page.to_string(),
        }
        .trim_end_matches('.')
        .to_ascii_lowercase();
        let url = parsed.as_str().to_string();
        let after_scheme = url.find("://").map(|i| i + 3).unwrap_or(0);
        let host_start = url[after_scheme..]
            .find(&host)
            .map(|i| i + after_scheme)
            .unwrap_or(after_scheme);
        let host_end = host_start + host.len();
        let page_origin = psl::site(&page_host);
        let is_third_party = psl::site(&host) != page_origin;
        Ok(RequestContext {
            url_lower: url.to_ascii_lowercase(),
            url,
            page_host,
            page_origin,
            resource_type,
            is_third_party,
            host,
            host_start,
            host_end,
        })
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    /// Maximal runs of `[a-z0-9%]` in the lowercased URL.
    pub(crate) fn tokens(&self) -> impl Iterator<Item = &str> {
        self.url_lower
            .split(|c: char| !is_token_char(c as u8))
            .filter(|t| !t.is_empty())
    }
}

pub(crate) fn is_token_char(c: u8) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || c == b'%'
}
