//! Runs baselines, per-subject batteries and campaigns against a live
//! gateway and site server.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use gauntlet_core::analysis::{analyze_and_write, AnalysisConfig, SubjectReport};
use gauntlet_core::archive::{
    latest_by_page, Archive, ArchiveKind, ArchiveManifest, Compatibility, SessionEntry,
    SessionKind, TestTargets, SCHEMA_VERSION,
};
use gauntlet_core::dom::{diff, DynamicAllowlist};
use gauntlet_core::filter::{FilterList, FilterSet};
use gauntlet_core::flow::CertMode;
use gauntlet_core::score::{rank, ranking_csv, PrivacyScore};
use gauntlet_core::subject::{Subject, SubjectOrigin};
use serde::{Deserialize, Serialize};
use tracing::{error, info, warn};

use crate::ca::CertAuthority;
use crate::config::{Config, SubjectConfig};
use crate::error::{Error, Result};
use crate::gateway::cache::ReplayCache;
use crate::gateway::upstream::Upstreams;
use crate::gateway::{now_ms, Gateway, GatewayConfig, Mode};
use crate::site_server::{SiteServer, Suite};
use crate::subjects::canned::{self, baseline as baseline_spec};
use crate::subjects::profile::seed_for;
use crate::subjects::{CommandSubject, Env, SimulatedSubject, SubjectDriver};

pub const BASELINE_PACKAGE: &str = "org.gauntlet.baseline";

/// How long a closing session waits for in-flight connections.
const SESSION_GRACE: Duration = Duration::from_secs(2);

/// Sessions recorded for the baseline: the recording pass and a replayed
/// check pass whose DOM differences seed the dynamic-element allowlist.
pub const BASELINE_SESSIONS: [&str; 2] = ["baseline-record", "baseline-check"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignEntry {
    pub subject_id: String,
    pub archive: PathBuf,
    pub compatibility: Option<Compatibility>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignFailure {
    pub subject: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignManifest {
    pub schema_version: u32,
    pub created_at: u64,
    pub cache_epoch: String,
    pub baseline_archive: PathBuf,
    pub subjects: Vec<CampaignEntry>,
    pub failures: Vec<CampaignFailure>,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub manifest: CampaignManifest,
    pub reports: Vec<SubjectReport>,
    pub ranking: Vec<PrivacyScore>,
}

pub fn load_filter_lists(paths: &[PathBuf]) -> Result<FilterSet> {
    if paths.is_empty() {
        return Ok(FilterSet::bundled());
    }
    let mut lists = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        lists.push(FilterList::parse(&name, &text));
    }
    Ok(FilterSet::new(lists))
}

/// Directory name for a subject archive.
pub fn archive_name(s: &Subject) -> String {
    format!("{}-{}", s.package_name, &s.cert_digest[..12])
}

pub struct Testbed {
    pub config: Config,
    pub suite: Arc<Suite>,
    pub gateway: Gateway,
    pub analysis: AnalysisConfig,
    lists: Arc<FilterSet>,
    site: SiteServer,
}

impl Testbed {
    /// Starts with the CA pair stored under the configured directory.
    pub async fn start(config: Config) -> Result<Testbed> {
        let (trusted, untrusted) = config.ca_paths();
        let ca = CertAuthority::load_or_create(&trusted, &untrusted)?;
        Testbed::start_with_ca(config, Arc::new(ca)).await
    }

    pub async fn start_with_ca(config: Config, ca: Arc<CertAuthority>) -> Result<Testbed> {
        config.validate()?;
        std::fs::create_dir_all(&config.paths.data_dir)
            .map_err(|e| Error::file(&config.paths.data_dir, e))?;
        let suite = Arc::new(Suite::load(config.suite_config())?);
        let bind = config.ports.bind;
        let site =
            SiteServer::start(suite.clone(), SocketAddr::new(bind, config.ports.site)).await?;

        let mut upstreams = Upstreams::to_default(site.addr());
        upstreams.timeout = config.timing.request_timeout();
        let mut gw = GatewayConfig::new(SocketAddr::new(bind, config.ports.proxy), upstreams);
        gw.udp_listen = config.ports.udp.map(|p| SocketAddr::new(bind, p));
        gw.volatile_params = config.gateway.volatile_params.clone();
        gw.dns_answer = config.gateway.dns_answer;
        gw.dns_upstream = config.gateway.dns_upstream;
        gw.inject = config.gateway.inject_tripwire;
        if let Some(p) = &config.paths.tripwire_js {
            gw.tripwire_js = Some(std::fs::read(p).map_err(|e| Error::file(p, e))?);
        }
        let gateway = Gateway::start(gw, ca, Mode::Replay).await?;

        let cache_path = config.cache_path();
        let cache = if cache_path.exists() {
            let c = ReplayCache::load(&cache_path)?;
            info!(entries = c.len(), epoch = %c.epoch(), "replay cache loaded");
            c
        } else {
            ReplayCache::new(config.gateway.staleness_limit)
        };
        gateway.replace_cache(cache);

        let lists = Arc::new(load_filter_lists(&config.analysis.filter_lists)?);
        let analysis = AnalysisConfig {
            lists: (*lists).clone(),
            history_threshold: config.analysis.history_threshold,
            ..AnalysisConfig::bundled()
        };
        Ok(Testbed {
            config,
            suite,
            gateway,
            analysis,
            lists,
            site,
        })
    }

    pub fn site_addr(&self) -> SocketAddr {
        self.site.addr()
    }

    pub fn targets(&self) -> TestTargets {
        self.suite.targets()
    }

    pub fn env(&self) -> Env {
        Env {
            proxy: self.gateway.addr(),
            trusted_root: self.gateway.ca().root_der(CertMode::TrustedCa),
            timeout: self.config.timing.request_timeout(),
        }
    }

    pub fn lists(&self) -> &Arc<FilterSet> {
        &self.lists
    }

    fn simulated(
        &self,
        package: &str,
        name: &str,
        spec: gauntlet_core::subject::SubjectBehaviorSpec,
    ) -> Result<SubjectDriver> {
        let subject = Subject::simulated(package, name)?;
        let seed = seed_for(&subject.subject_id);
        Ok(SubjectDriver::Simulated(Box::new(SimulatedSubject::new(
            subject,
            spec,
            self.lists.clone(),
            seed,
        )?)))
    }

    pub fn canned_driver(&self, c: &canned::Canned) -> Result<SubjectDriver> {
        self.simulated(&c.package, c.name, c.spec.clone())
    }

    pub fn driver_for(&self, sc: &SubjectConfig) -> Result<SubjectDriver> {
        if let Some(name) = &sc.canned {
            let c = canned::by_name(name)
                .ok_or_else(|| Error::Config(format!("unknown canned subject {name:?}")))?;
            let package = sc.package.clone().unwrap_or(c.package);
            return self.simulated(&package, sc.name.as_deref().unwrap_or(c.name), c.spec);
        }
        let package = sc
            .package
            .as_deref()
            .ok_or_else(|| Error::Config("subject without package".into()))?;
        let name = sc.name.as_deref().unwrap_or(package);
        if let Some(spec) = &sc.spec {
            return self.simulated(package, name, spec.clone());
        }
        let hooks = sc
            .hooks
            .clone()
            .ok_or_else(|| Error::Config(format!("{package}: no driver configured")))?;
        let subject = match &sc.cert_digest {
            Some(d) => Subject::new(package, d, SubjectOrigin::Play, name, None)?,
            None => Subject::simulated(package, name)?,
        };
        Ok(SubjectDriver::Command(Box::new(CommandSubject::new(
            subject, hooks,
        ))))
    }

    /// Records a fresh replay cache and baseline archive. On failure the
    /// previous cache and baseline stay in place.
    pub async fn rebuild_cache(&self) -> Result<Archive> {
        let final_dir = self.config.baseline_dir();
        let tmp_dir = final_dir.with_extension("tmp");
        if tmp_dir.exists() {
            std::fs::remove_dir_all(&tmp_dir).map_err(|e| Error::file(&tmp_dir, e))?;
        }
        let fresh = ReplayCache::new(self.config.gateway.staleness_limit);
        let previous = self.gateway.replace_cache(fresh);
        let previous_mode = self.gateway.mode();
        let result = self.record_baseline(&tmp_dir).await;
        self.gateway.set_mode(previous_mode);
        if self.gateway.end_session().is_some() {
            warn!("baseline session left open");
        }
        let manifest = match result {
            Ok(m) => m,
            Err(e) => {
                self.gateway.replace_cache(previous);
                let _ = std::fs::remove_dir_all(&tmp_dir);
                error!(error = %e, "cache rebuild failed, previous cache kept");
                return Err(e);
            }
        };
        self.gateway
            .with_cache(|c| c.save(&self.config.cache_path()))?;
        let old = final_dir.with_extension("old");
        if final_dir.exists() {
            if old.exists() {
                std::fs::remove_dir_all(&old).map_err(|e| Error::file(&old, e))?;
            }
            std::fs::rename(&final_dir, &old).map_err(|e| Error::file(&final_dir, e))?;
        }
        std::fs::rename(&tmp_dir, &final_dir).map_err(|e| Error::file(&tmp_dir, e))?;
        if old.exists() {
            std::fs::remove_dir_all(&old).map_err(|e| Error::file(&old, e))?;
        }
        info!(epoch = ?manifest.cache_epoch, dir = %final_dir.display(), "baseline recorded");
        Archive::open(&final_dir).map_err(Into::into)
    }

    async fn record_baseline(&self, dir: &Path) -> Result<ArchiveManifest> {
        let archive = Archive::create(dir)?;
        let targets = self.targets();
        let subject = Subject::simulated(BASELINE_PACKAGE, "Baseline browser")?;
        let mut browser = SimulatedSubject::new(
            subject.clone(),
            baseline_spec(),
            self.lists.clone(),
            seed_for(BASELINE_PACKAGE),
        )?;
        archive.write_profile(&browser.reset_profile())?;
        let env = self.env();
        let mut sessions = Vec::new();

        for (i, id) in BASELINE_SESSIONS.iter().enumerate() {
            self.gateway
                .set_mode(if i == 0 { Mode::Record } else { Mode::Replay });
            self.gateway
                .begin_session(&archive, id, CertMode::TrustedCa)?;
            let started_at = now_ms();
            browser.launch(&env).await?;
            let dom_pages = targets.dom_pages();
            for page in targets.visit_order() {
                let load = browser.open(&page).await.map_err(|e| Error::Rebuild {
                    page: page.clone(),
                    detail: e.to_string(),
                })?;
                if dom_pages.contains(&page) && load.snapshot.is_none() {
                    return Err(Error::Rebuild {
                        page,
                        detail: "no DOM report was produced".into(),
                    });
                }
            }
            browser.stop();
            let stats = self.gateway.finish_session(SESSION_GRACE).await;
            info!(session = id, ?stats, "baseline pass done");
            sessions.push(SessionEntry {
                id: id.to_string(),
                kind: SessionKind::Baseline,
                cert_mode: CertMode::TrustedCa,
                pages: targets.visit_order(),
                load_failures: Vec::new(),
                started_at,
                ended_at: now_ms(),
            });
        }

        let first = latest_by_page(archive.read_snapshots(BASELINE_SESSIONS[0])?);
        let second = latest_by_page(archive.read_snapshots(BASELINE_SESSIONS[1])?);
        let mut allowlist = DynamicAllowlist::default();
        for (page, a) in &first {
            let Some(b) = second.get(page) else { continue };
            let d = diff(a, b, &DynamicAllowlist::default())?;
            for el in d.missing.iter().chain(&d.added) {
                allowlist.push(page, &el.locator());
            }
        }
        if !allowlist.is_empty() {
            warn!(
                entries = allowlist.to_text().lines().count(),
                "dynamic elements differ between baseline passes"
            );
        }
        archive.write_allowlist(&allowlist)?;

        let manifest = ArchiveManifest {
            schema_version: SCHEMA_VERSION,
            kind: ArchiveKind::Baseline,
            subject,
            compatibility: Some(Compatibility::Compatible),
            targets,
            sessions,
            cache_epoch: Some(self.gateway.with_cache(|c| c.epoch())),
            baseline_archive: Some(".".into()),
            filter_lists: self.lists.versions(),
            created_at: now_ms(),
        };
        archive.write_manifest(&manifest)?;
        Ok(manifest)
    }

    fn require_baseline(&self) -> Result<Archive> {
        if self.gateway.with_cache(|c| c.is_empty()) {
            return Err(Error::Config(
                "replay cache is empty; run `gauntlet record` first".into(),
            ));
        }
        Archive::open(self.config.baseline_dir())
            .map_err(|e| Error::Config(format!("no baseline archive: {e}")))
    }

    /// Runs the full battery for one subject and writes its archive.
    pub async fn run_battery(&self, driver: &mut SubjectDriver) -> Result<Archive> {
        let baseline = self.require_baseline()?;
        let subject = driver.subject().clone();
        let dir = self.config.subjects_dir().join(archive_name(&subject));
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        }
        let archive = Archive::create(&dir)?;
        let targets = self.targets();
        let env = self.env();
        let launch_timeout = self.config.timing.launch_timeout();
        self.gateway.set_mode(Mode::Replay);

        archive.write_profile(&driver.reset_profile().await?)?;
        let mut sessions = Vec::new();

        let compat_page = format!("http://{}/", targets.bare_host);
        let started_at = now_ms();
        self.gateway
            .begin_session(&archive, "compat", CertMode::TrustedCa)?;
        let mut compat = driver
            .probe_compatibility(&env, &compat_page, launch_timeout)
            .await;
        self.gateway.finish_session(SESSION_GRACE).await;
        if compat == Compatibility::Compatible {
            let reached = archive.read_flows("compat")?.iter().any(|f| {
                f.host().as_deref() == Some(targets.bare_host.as_str()) && f.status.is_some()
            });
            if !reached {
                info!(subject = %subject.subject_id, "compatibility page never reached the gateway");
                compat = Compatibility::Incompatible;
            }
        }
        sessions.push(SessionEntry {
            id: "compat".into(),
            kind: SessionKind::Compatibility,
            cert_mode: CertMode::TrustedCa,
            pages: vec![compat_page],
            load_failures: Vec::new(),
            started_at,
            ended_at: now_ms(),
        });
        info!(subject = %subject.subject_id, ?compat, "compatibility");

        if compat != Compatibility::Incompatible {
            sessions.push(self.main_session(driver, &archive, &env, &targets).await?);
            sessions.push(
                self.untrusted_session(driver, &archive, &env, &targets)
                    .await?,
            );
        }

        let stale = self.gateway.with_cache_mut(|c| {
            c.note_session_served();
            c.is_stale()
        });
        if stale {
            warn!("replay cache exceeded its staleness limit; run `gauntlet record` to refresh it");
        }
        self.gateway
            .with_cache(|c| c.save(&self.config.cache_path()))?;

        let manifest = ArchiveManifest {
            schema_version: SCHEMA_VERSION,
            kind: ArchiveKind::Subject,
            subject,
            compatibility: Some(compat),
            targets,
            sessions,
            cache_epoch: Some(self.gateway.with_cache(|c| c.epoch())),
            baseline_archive: Some(std::path::absolute(baseline.root())?.display().to_string()),
            filter_lists: self.lists.versions(),
            created_at: now_ms(),
        };
        archive.write_manifest(&manifest)?;
        Ok(archive)
    }

    async fn main_session(
        &self,
        driver: &mut SubjectDriver,
        archive: &Archive,
        env: &Env,
        targets: &TestTargets,
    ) -> Result<SessionEntry> {
        let started_at = now_ms();
        self.gateway
            .begin_session(archive, "main", CertMode::TrustedCa)?;
        let mut failures = Vec::new();
        match driver.launch(env).await {
            Ok(_) => {
                for page in targets.visit_order() {
                    if let Err(e) = driver.open(&page).await {
                        warn!(%page, error = %e, "page load failed");
                        failures.push(format!("{page}: {e}"));
                    }
                }
            }
            Err(e) => failures.push(format!("launch: {e}")),
        }
        driver.stop().await;
        let stats = self.gateway.finish_session(SESSION_GRACE).await;
        info!(?stats, "main session done");
        Ok(SessionEntry {
            id: "main".into(),
            kind: SessionKind::Main,
            cert_mode: CertMode::TrustedCa,
            pages: targets.visit_order(),
            load_failures: failures,
            started_at,
            ended_at: now_ms(),
        })
    }

    /// Reloads the HTTPS page with a chain from a CA the device does not
    /// trust. A failed load is the expected outcome, not a load failure.
    async fn untrusted_session(
        &self,
        driver: &mut SubjectDriver,
        archive: &Archive,
        env: &Env,
        targets: &TestTargets,
    ) -> Result<SessionEntry> {
        let started_at = now_ms();
        self.gateway
            .begin_session(archive, "untrusted", CertMode::UntrustedCa)?;
        let mut failures = Vec::new();
        match driver.launch(env).await {
            Ok(_) => {
                if let Err(e) = driver.open(&targets.https_page).await {
                    info!(error = %e, "page refused under untrusted CA");
                }
            }
            Err(e) => failures.push(format!("launch: {e}")),
        }
        driver.stop().await;
        self.gateway.finish_session(SESSION_GRACE).await;
        Ok(SessionEntry {
            id: "untrusted".into(),
            kind: SessionKind::UntrustedCa,
            cert_mode: CertMode::UntrustedCa,
            pages: vec![targets.https_page.clone()],
            load_failures: failures,
            started_at,
            ended_at: now_ms(),
        })
    }

    /// Battery plus analysis for every driver, then the ranking.
    pub async fn run_campaign(&self, drivers: Vec<SubjectDriver>) -> Result<CampaignResult> {
        let baseline = self.require_baseline()?;
        let out = self.config.paths.data_dir.join("campaign");
        std::fs::create_dir_all(&out).map_err(|e| Error::file(&out, e))?;
        let mut entries = Vec::new();
        let mut failures = Vec::new();
        let mut reports = Vec::new();
        for mut d in drivers {
            let id = d.subject().subject_id.clone();
            let outcome = match self.run_battery(&mut d).await {
                Ok(archive) => analyze_and_write(&archive, &self.analysis)
                    .map(|r| (archive, r))
                    .map_err(Error::from),
                Err(e) => Err(e),
            };
            match outcome {
                Ok((archive, report)) => {
                    entries.push(CampaignEntry {
                        subject_id: id,
                        archive: archive.root().to_path_buf(),
                        compatibility: report.compatibility,
                    });
                    reports.push(report);
                }
                Err(e) => {
                    error!(subject = %id, error = %e, "subject failed");
                    failures.push(CampaignFailure {
                        subject: id,
                        error: e.to_string(),
                    });
                }
            }
        }
        let scores: Vec<PrivacyScore> = reports.iter().map(|r| r.score.clone()).collect();
        let ranking = write_ranking(&out, &scores)?;
        let manifest = CampaignManifest {
            schema_version: SCHEMA_VERSION,
            created_at: now_ms(),
            cache_epoch: self.gateway.with_cache(|c| c.epoch()),
            baseline_archive: baseline.root().to_path_buf(),
            subjects: entries,
            failures,
        };
        write_json(&out.join("campaign.json"), &manifest)?;
        info!(subjects = manifest.subjects.len(), failures = manifest.failures.len(), dir = %out.display(), "campaign done");
        Ok(CampaignResult {
            manifest,
            reports,
            ranking,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

/// Writes `ranking.csv` and `scores.json` into `dir`; returns the ranking.
pub fn write_ranking(dir: &Path, scores: &[PrivacyScore]) -> Result<Vec<PrivacyScore>> {
    let ranked = rank(scores);
    let csv = dir.join("ranking.csv");
    std::fs::write(&csv, ranking_csv(scores)).map_err(|e| Error::file(&csv, e))?;
    write_json(&dir.join("scores.json"), &ranked)?;
    Ok(ranked)
}
