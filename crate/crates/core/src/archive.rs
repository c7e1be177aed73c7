//! On-disk session archives.
//!
//! ```text
//! <root>/manifest.json
//! <root>/profile.json
//! <root>/report.json
//! <root>/allowlist.txt                 (baseline archives)
//! <root>/sessions/<id>/flows.jsonl
//! <root>/sessions/<id>/snapshots/NNNNNN.json
//! <root>/sessions/<id>/probes/NNNNNN.json
//! <root>/sessions/<id>/malformed/NNNNNN.bin
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dom::{DomSnapshot, DynamicAllowlist};
use crate::flow::{read_flow_log, CapturedFlow, CertMode};
use crate::leak::ProbeReport;
use crate::profile::DeviceProfile;
use crate::subject::Subject;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchiveKind {
    Subject,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionKind {
    Compatibility,
    Main,
    UntrustedCa,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compatibility {
    Compatible,
    NeedsInteraction,
    Incompatible,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub id: String,
    pub kind: SessionKind,
    pub cert_mode: CertMode,
    /// Targets opened, in order, exactly as handed to the subject.
    pub pages: Vec<String>,
    #[serde(default)]
    pub load_failures: Vec<String>,
    pub started_at: u64,
    pub ended_at: u64,
}

/// The test-site suite as seen by one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestTargets {
    pub honeypage: String,
    pub permissions_page: String,
    /// Host opened without a scheme.
    pub bare_host: String,
    pub https_page: String,
    pub mixed_page: String,
    pub mixed_insecure: Vec<String>,
    pub popular: Vec<String>,
}

impl TestTargets {
    /// Pages whose DOM is compared against the baseline.
    pub fn dom_pages(&self) -> Vec<String> {
        let mut v = vec![self.honeypage.clone()];
        v.extend(self.popular.iter().cloned());
        v
    }

    /// Visit order of the main session.
    pub fn visit_order(&self) -> Vec<String> {
        let mut v = vec![
            self.honeypage.clone(),
            self.permissions_page.clone(),
            self.bare_host.clone(),
            self.https_page.clone(),
            self.mixed_page.clone(),
        ];
        v.extend(self.popular.iter().cloned());
        v
    }

    /// Absolute URLs of every test page; the bare host under both schemes.
    pub fn root_urls(&self) -> Vec<String> {
        let mut v = vec![
            self.honeypage.clone(),
            self.permissions_page.clone(),
            format!("http://{}/", self.bare_host),
            format!("https://{}/", self.bare_host),
            self.https_page.clone(),
            self.mixed_page.clone(),
        ];
        v.extend(self.popular.iter().cloned());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub schema_version: u32,
    pub kind: ArchiveKind,
    pub subject: Subject,
    #[serde(default)]
    pub compatibility: Option<Compatibility>,
    pub targets: TestTargets,
    pub sessions: Vec<SessionEntry>,
    #[serde(default)]
    pub cache_epoch: Option<String>,
    /// Path of the baseline archive, relative to this archive's root or absolute.
    #[serde(default)]
    pub baseline_archive: Option<String>,
    #[serde(default)]
    pub filter_lists: BTreeMap<String, Option<String>>,
    pub created_at: u64,
}

impl ArchiveManifest {
    pub fn sessions_of(&self, kind: SessionKind) -> impl Iterator<Item = &SessionEntry> {
        self.sessions.iter().filter(move |s| s.kind == kind)
    }
}

#[derive(Debug, Clone)]
pub struct Archive {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_new(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn numbered_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    v.sort();
    Ok(v)
}

impl Archive {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("sessions")).map_err(|e| Error::io(&root, e))?;
        Ok(Archive { root })
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.join("manifest.json").is_file() {
            return Err(Error::MissingArtifact(root, "manifest.json"));
        }
        Ok(Archive { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(name, e))?;
        bytes.push(b'\n');
        write_atomic(&self.path(name), &bytes)
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let p = self.path(name);
        if !p.is_file() {
            return Err(Error::MissingArtifact(self.root.clone(), leak_name(name)));
        }
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::json(p.display().to_string(), e))
    }

    pub fn write_manifest(&self, m: &ArchiveManifest) -> Result<()> {
        self.write_json("manifest.json", m)
    }

    pub fn read_manifest(&self) -> Result<ArchiveManifest> {
        self.read_json("manifest.json")
    }

    pub fn write_profile(&self, p: &DeviceProfile) -> Result<()> {
        self.write_json("profile.json", p)
    }

    pub fn read_profile(&self) -> Result<DeviceProfile> {
        self.read_json("profile.json")
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    /// Creates the session directory tree.
    pub fn create_session(&self, id: &str) -> Result<PathBuf> {
        let dir = self.session_dir(id);
        for sub in ["snapshots", "probes", "malformed"] {
            fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(dir)
    }

    pub fn flows_path(&self, id: &str) -> PathBuf {
        self.session_dir(id).join("flows.jsonl")
    }

    pub fn read_flows(&self, id: &str) -> Result<Vec<CapturedFlow>> {
        let p = self.flows_path(id);
        if !p.exists() {
            return Ok(Vec::new());
        }
        read_flow_log(&p)
    }

    pub fn write_snapshot(&self, id: &str, seq: usize, snap: &DomSnapshot) -> Result<()> {
        let p = self
            .session_dir(id)
            .join("snapshots")
            .join(format!("{seq:06}.json"));
        write_new(
            &p,
            &serde_json::to_vec(snap).map_err(|e| Error::json("snapshot", e))?,
        )
    }

    pub fn read_snapshots(&self, id: &str) -> Result<Vec<DomSnapshot>> {
        numbered_files(&self.session_dir(id).join("snapshots"), "json")?
            .into_iter()
            .map(|p| {
                let b = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                serde_json::from_slice(&b).map_err(|e| Error::json(p.display().to_string(), e))
            })
            .collect()
    }

    pub fn write_probe(&self, id: &str, seq: usize, report: &ProbeReport) -> Result<()> {
        let p = self
            .session_dir(id)
            .join("probes")
            .join(format!("{seq:06}.json"));
        write_new(
            &p,
            &serde_json::to_vec(report).map_err(|e| Error::json("probe", e))?,
        )
    }

    pub fn read_probes(&self, id: &str) -> Result<Vec<ProbeReport>> {
        numbered_files(&self.session_dir(id).join("probes"), "json")?
            .into_iter()
            .map(|p| {
                let b = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                serde_json::from_slice(&b).map_err(|e| Error::json(p.display().to_string(), e))
            })
            .collect()
    }

    pub fn write_malformed(&self, id: &str, seq: usize, body: &[u8]) -> Result<PathBuf> {
        let p = self
            .session_dir(id)
            .join("malformed")
            .join(format!("{seq:06}.bin"));
        write_new(&p, body)?;
        Ok(p)
    }

    pub fn malformed_count(&self, id: &str) -> Result<usize> {
        Ok(numbered_files(&self.session_dir(id).join("malformed"), "bin")?.len())
    }

    pub fn read_allowlist(&self) -> Result<DynamicAllowlist> {
        let p = self.path("allowlist.txt");
        if !p.exists() {
            return Ok(DynamicAllowlist::default());
        }
        DynamicAllowlist::parse(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)
    }

    pub fn write_allowlist(&self, a: &DynamicAllowlist) -> Result<()> {
        write_atomic(&self.path("allowlist.txt"), a.to_text().as_bytes())
    }

    /// Resolves the manifest's baseline reference.
    pub fn baseline(&self, m: &ArchiveManifest) -> Result<Archive> {
        let rel = m
            .baseline_archive
            .as_ref()
            .ok_or_else(|| Error::invalid("manifest", "no baseline archive recorded"))?;
        let p = Path::new(rel);
        Archive::open(if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        })
    }
}

fn leak_name(name: &str) -> &'static str {
    match name {
        "manifest.json" => "manifest.json",
        "profile.json" => "profile.json",
        "report.json" => "report.json",
        _ => "archive file",
    }
}

/// Latest snapshot per page URL; later files win ties on `collected_at`.
pub fn latest_by_page(snaps: Vec<DomSnapshot>) -> BTreeMap<String, DomSnapshot> {
    let mut out: BTreeMap<String, DomSnapshot> = BTreeMap::new();
    for s in snaps {
        match out.get(&s.page_url) {
            Some(prev) if prev.collected_at > s.collected_at => {}
            _ => {
                out.insert(s.page_url.clone(), s);
            }
        }
    }
    out
}
