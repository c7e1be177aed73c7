//! Local test-site suite: honeypage, permissions page, bare-domain page,
//! HTTPS-only page, mixed-content page and the popular-page fixtures.
//!
//! The gateway terminates TLS and forwards plaintext, so the original scheme
//! is read from `X-Forwarded-Proto`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use gauntlet_core::archive::TestTargets;
use serde::{Deserialize, Serialize};
use tokio::io::BufReader;
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;
use tracing::{debug, info};

use crate::error::{Error, Result};
use crate::http1::{read_request, write_response, Response};

/// Top-level categories of the retired Alexa category rankings.
pub const POPULAR_CATEGORIES: [&str; 16] = [
    "Arts",
    "Business",
    "Computers",
    "Games",
    "Health",
    "Home",
    "Kids and Teens",
    "News",
    "Recreation",
    "Reference",
    "Regional",
    "Science",
    "Shopping",
    "Society",
    "Sports",
    "Adult",
];

pub const ANALYTICS_SCRIPT: &str = "https://www.google-analytics.com/analytics.js";
pub const CDN_SCRIPT: &str = "https://cdnjs.cloudflare.com/ajax/libs/jquery/3.7.1/jquery.min.js";

const ASSETS: [&str; 13] = [
    "honeypage/index.html",
    "honeypage/style.css",
    "honeypage/app.js",
    "permissions/index.html",
    "permissions/probe.js",
    "bare/index.html",
    "secure/index.html",
    "mixed/index.html",
    "insecure/s.js",
    "insecure/pixel.png",
    "popular/page.html",
    "popular/site.css",
    "popular/site.js",
];

const GIF: &[u8] = b"GIF89a\x01\x00\x01\x00\x80\x00\x00\x00\x00\x00\xff\xff\xff!\xf9\x04\x01\x00\x00\x00\x00,\x00\x00\x00\x00\x01\x00\x01\x00\x00\x02\x02D\x01\x00;";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteHosts {
    pub honeypage: String,
    pub permissions: String,
    pub bare: String,
    pub secure: String,
    pub mixed: String,
    pub insecure: String,
}

impl Default for SuiteHosts {
    fn default() -> Self {
        SuiteHosts {
            honeypage: "honeypage.test".into(),
            permissions: "permissions.test".into(),
            bare: "bare.test".into(),
            secure: "secure.test".into(),
            mixed: "mixed.test".into(),
            insecure: "insecure.test".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularSite {
    pub category: String,
    pub host: String,
}

impl PopularSite {
    pub fn for_category(category: &str) -> Self {
        let slug: String = category
            .to_ascii_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join("-");
        PopularSite {
            category: category.to_string(),
            host: format!("{slug}.test"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub dir: PathBuf,
    pub hosts: SuiteHosts,
    pub popular: Vec<PopularSite>,
    /// Popular fixtures change on every request, like the live pages they
    /// stand in for; only the replay cache makes them stable.
    pub dynamic_popular: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            dir: bundled_suite_dir(),
            hosts: SuiteHosts::default(),
            popular: POPULAR_CATEGORIES
                .iter()
                .map(|c| PopularSite::for_category(c))
                .collect(),
            dynamic_popular: true,
        }
    }
}

pub fn bundled_suite_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("suite")
}

impl SuiteConfig {
    pub fn targets(&self) -> TestTargets {
        let h = &self.hosts;
        TestTargets {
            honeypage: format!("http://{}/", h.honeypage),
            permissions_page: format!("http://{}/", h.permissions),
            bare_host: h.bare.clone(),
            https_page: format!("https://{}/", h.secure),
            mixed_page: format!("https://{}/", h.mixed),
            mixed_insecure: vec![
                format!("http://{}/s.js", h.insecure),
                format!("http://{}/pixel.png", h.insecure),
            ],
            popular: self
                .popular
                .iter()
                .map(|p| format!("http://{}/", p.host))
                .collect(),
        }
    }
}

/// Loaded suite content. Construction fails on the first missing asset.
pub struct Suite {
    config: SuiteConfig,
    assets: HashMap<&'static str, Vec<u8>>,
    views: HashMap<String, AtomicU64>,
}

fn content_type(path: &str) -> &'static str {
    match path.rsplit_once('.').map(|(_, e)| e) {
        Some("html") => "text/html; charset=utf-8",
        Some("css") => "text/css",
        Some("js") => "application/javascript",
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        _ => "application/octet-stream",
    }
}

impl Suite {
    pub fn load(config: SuiteConfig) -> Result<Suite> {
        let mut assets = HashMap::new();
        for name in ASSETS.iter() {
            let p = config.dir.join(name);
            let bytes =
                std::fs::read(&p).map_err(|_| Error::MissingAsset(p.display().to_string()))?;
            assets.insert(*name, bytes);
        }
        let views = config
            .popular
            .iter()
            .map(|p| (p.host.clone(), AtomicU64::new(0)))
            .collect();
        info!(dir = %config.dir.display(), popular = config.popular.len(), "suite loaded");
        Ok(Suite {
            config,
            assets,
            views,
        })
    }

    pub fn config(&self) -> &SuiteConfig {
        &self.config
    }

    pub fn targets(&self) -> TestTargets {
        self.config.targets()
    }

    fn asset(&self, name: &'static str) -> Response {
        Response::new(200, Some(content_type(name)), self.assets[name].clone())
    }

    /// Response for `path` on `host` reached over `scheme`.
    pub fn respond(&self, host: &str, scheme: &str, method: &str, path: &str) -> Response {
        let host = host.split(':').next().unwrap_or(host).to_ascii_lowercase();
        let path = path.split(['?', '#']).next().unwrap_or("/");
        if !matches!(method, "GET" | "HEAD" | "POST") {
            return Response::new(405, Some("text/plain"), b"method not allowed\n".to_vec());
        }
        let h = &self.config.hosts;
        let page = |dir: &str, p: &str| -> Option<&'static str> {
            let name = if p == "/" || p == "/index.html" {
                format!("{dir}/index.html")
            } else {
                format!("{dir}{p}")
            };
            ASSETS
                .iter()
                .copied()
                .find(|a| *a == name && self.assets.contains_key(a))
        };
        let found = if host == h.honeypage {
            page("honeypage", path)
        } else if host == h.permissions {
            page("permissions", path)
        } else if host == h.bare {
            page("bare", path)
        } else if host == h.secure {
            if scheme != "https" {
                let mut r = Response::new(301, Some("text/plain"), Vec::new());
                r.head
                    .headers
                    .append("Location", format!("https://{host}{path}"));
                return r;
            }
            page("secure", path)
        } else if host == h.mixed {
            page("mixed", path)
        } else if host == h.insecure {
            page("insecure", path)
        } else if let Some(site) = self.config.popular.iter().find(|p| p.host == host) {
            return self.popular(site, path);
        } else {
            return catch_all(path);
        };
        match found {
            Some(name) => self.asset(name),
            None => Response::new(404, Some("text/plain"), b"not found\n".to_vec()),
        }
    }

    fn popular(&self, site: &PopularSite, path: &str) -> Response {
        match path {
            "/static/site.css" => return self.asset("popular/site.css"),
            "/static/site.js" => return self.asset("popular/site.js"),
            "/" | "/index.html" => {}
            _ => return Response::new(404, Some("text/plain"), b"not found\n".to_vec()),
        }
        let index = self
            .config
            .popular
            .iter()
            .position(|p| p.host == site.host)
            .unwrap_or(0);
        let view = if self.config.dynamic_popular {
            self.views[&site.host].fetch_add(1, Ordering::SeqCst)
        } else {
            0
        };
        let mut extra = Vec::new();
        if index % 3 == 0 {
            extra.push(format!("<script src=\"{ANALYTICS_SCRIPT}\"></script>"));
        }
        if index % 4 == 1 {
            extra.push(format!("<script src=\"{CDN_SCRIPT}\"></script>"));
        }
        let featured = ["lead", "opinion", "video"][(view % 3) as usize];
        let items: String = (1..=5)
            .map(|i| {
                format!(
                    "<li><a href=\"/story/{i}\">{} story {i}</a></li>",
                    site.category
                )
            })
            .collect();
        let html = String::from_utf8_lossy(&self.assets["popular/page.html"])
            .replace("{{title}}", &format!("{} Daily", site.category))
            .replace("{{category}}", &site.category)
            .replace("{{view}}", &view.to_string())
            .replace("{{extra_head}}", &extra.join("\n"))
            .replace("{{items}}", &items)
            .replace("{{featured}}", featured);
        let mut r = Response::new(200, Some("text/html; charset=utf-8"), html.into_bytes());
        r.head.headers.append("Cache-Control", "no-cache");
        r
    }
}

/// Third-party hosts: scripts get an empty script, images a 1x1 GIF,
/// stylesheets an empty sheet, everything else 204.
fn catch_all(path: &str) -> Response {
    let ext = path
        .rsplit_once('.')
        .map(|(_, e)| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "js" => Response::new(
            200,
            Some("application/javascript"),
            b"/* stub */\n".to_vec(),
        ),
        "css" => Response::new(200, Some("text/css"), Vec::new()),
        "gif" | "png" | "jpg" | "jpeg" | "webp" | "ico" => {
            Response::new(200, Some("image/gif"), GIF.to_vec())
        }
        _ if path.contains("collect") || path.contains("pixel") => {
            Response::new(200, Some("image/gif"), GIF.to_vec())
        }
        _ => Response::new(204, None, Vec::new()),
    }
}

pub struct SiteServer {
    addr: SocketAddr,
    task: JoinHandle<()>,
}

impl SiteServer {
    pub async fn start(suite: Arc<Suite>, listen: SocketAddr) -> Result<SiteServer> {
        let listener = TcpListener::bind(listen).await?;
        let addr = listener.local_addr()?;
        let task = tokio::spawn(async move {
            loop {
                let Ok((stream, _)) = listener.accept().await else {
                    continue;
                };
                let suite = suite.clone();
                tokio::spawn(async move {
                    if let Err(e) = serve(stream, &suite).await {
                        debug!(error = %e, "site connection error");
                    }
                });
            }
        });
        info!(%addr, "site server listening");
        Ok(SiteServer { addr, task })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for SiteServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn serve(stream: TcpStream, suite: &Suite) -> Result<()> {
    let mut r = BufReader::new(stream);
    while let Some(req) = read_request(&mut r).await? {
        let host = req.head.headers.get("host").unwrap_or_default().to_string();
        let scheme = req
            .head
            .headers
            .get("x-forwarded-proto")
            .unwrap_or("http")
            .to_ascii_lowercase();
        let resp = suite.respond(&host, &scheme, &req.head.method, &req.head.target);
        let keep = req.head.keep_alive();
        write_response(r.get_mut(), &resp, keep).await?;
        if !keep {
            break;
        }
    }
    Ok(())
}
