use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gauntlet_core::analysis::{analyze_and_write, AnalysisConfig, SubjectReport};
use gauntlet_core::archive::Archive;
use gauntlet_testbed::config::Config;
use gauntlet_testbed::gateway::Mode;
use gauntlet_testbed::orchestrator::{load_filter_lists, write_ranking, Testbed};
use gauntlet_testbed::subjects::{canned, SubjectDriver};
use gauntlet_testbed::{Error, Result};
use tracing::info;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "gauntlet",
    version,
    about = "Privacy testbed for in-app browsers"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, short, global = true, env = "GAUNTLET_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ServeMode {
    Replay,
    Record,
    Live,
}

#[derive(Subcommand)]
enum Command {
    /// Record a fresh replay cache and baseline archive.
    Record,
    /// Run the battery for configured subjects and analyze each archive.
    Run {
        /// Only subjects whose package or canned name matches.
        #[arg(long)]
        only: Vec<String>,
    },
    /// Run every configured subject (or the canned suites) and rank them.
    Campaign {
        /// Use the built-in simulated subjects instead of the configured ones.
        #[arg(long)]
        canned: bool,
    },
    /// Analyze an existing subject archive and write its report.json.
    Analyze { archive: PathBuf },
    /// Rank analyzed archives into ranking.csv and scores.json.
    Score {
        archives: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Print a short summary of an analyzed archive.
    Report { archive: PathBuf },
    /// Keep the gateway and site server up for manually driven devices.
    Serve {
        #[arg(long, value_enum, default_value = "replay")]
        mode: ServeMode,
    },
}

fn analysis_config(config: &Config) -> Result<AnalysisConfig> {
    Ok(AnalysisConfig {
        lists: load_filter_lists(&config.analysis.filter_lists)?,
        history_threshold: config.analysis.history_threshold,
        ..AnalysisConfig::bundled()
    })
}

fn summary(r: &SubjectReport) -> String {
    let s = &r.score;
    let mut out = format!(
        "{} ({})\n  compatibility: {:?}\n  engine: {:?}\n",
        r.subject.display_name, r.subject.subject_id, r.compatibility, r.engine
    );
    out += &format!(
        "  protective: blocks_tracking_content={} https_default={} webapi_blocking={}\n",
        s.protective.blocks_tracking_content,
        s.protective.https_default,
        s.protective.webapi_blocking
    );
    out += &format!(
        "  harmful: allows_tracking_requests={} cert_validation_fail={} pii_exposure={} history_sharing={}\n",
        s.harmful.allows_tracking_requests, s.harmful.cert_validation_fail, s.harmful.pii_exposure, s.harmful.history_sharing
    );
    out += &format!("  rank_key: {}\n", s.rank_key);
    for f in &r.pii.findings {
        out += &format!(
            "  pii: {} {} in {:?} to {}\n",
            f.pii_type,
            f.encoding.as_str(),
            f.location,
            f.destination_host
        );
    }
    for h in &r.history {
        out += &format!(
            "  history: {} saw {:.4} of visited sites ({:?})\n",
            h.destination_host, h.exposure_fraction, h.feature
        );
    }
    for l in &r.load_failures {
        out += &format!("  load failure: {l}\n");
    }
    out
}

fn read_report(archive: &Path) -> Result<SubjectReport> {
    Ok(Archive::open(archive)?.read_json("report.json")?)
}

async fn drivers(tb: &Testbed, only: &[String], use_canned: bool) -> Result<Vec<SubjectDriver>> {
    if use_canned {
        return canned::verdict_suite()
            .iter()
            .chain(&canned::mixed_content_suite())
            .map(|c| tb.canned_driver(c))
            .collect();
    }
    if tb.config.subjects.is_empty() {
        return Err(Error::Config("no subjects configured".into()));
    }
    tb.config
        .subjects
        .iter()
        .filter(|s| {
            only.is_empty()
                || only.iter().any(|o| {
                    s.package.as_deref() == Some(o.as_str())
                        || s.canned.as_deref() == Some(o.as_str())
                })
        })
        .map(|s| tb.driver_for(s))
        .collect()
}

async fn run(cli: Cli) -> Result<()> {
    let config = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Record => {
            let tb = Testbed::start(config).await?;
            let archive = tb.rebuild_cache().await?;
            println!("baseline recorded in {}", archive.root().display());
        }
        Command::Run { only } => {
            let tb = Testbed::start(config).await?;
            for mut d in drivers(&tb, &only, false).await? {
                let archive = tb.run_battery(&mut d).await?;
                let report = analyze_and_write(&archive, &tb.analysis)?;
                print!("{}", summary(&report));
            }
        }
        Command::Campaign { canned } => {
            let tb = Testbed::start(config).await?;
            let ds = drivers(&tb, &[], canned).await?;
            let result = tb.run_campaign(ds).await?;
            for (i, s) in result.ranking.iter().enumerate() {
                println!("{:>3}. {:+.4} {}", i + 1, s.rank_key, s.subject_id);
            }
            for f in &result.manifest.failures {
                println!("failed: {} ({})", f.subject, f.error);
            }
        }
        Command::Analyze { archive } => {
            let report = analyze_and_write(&Archive::open(&archive)?, &analysis_config(&config)?)?;
            print!("{}", summary(&report));
        }
        Command::Score { archives, out } => {
            let scores = archives
                .iter()
                .map(|a| read_report(a).map(|r| r.score))
                .collect::<Result<Vec<_>>>()?;
            std::fs::create_dir_all(&out).map_err(|e| Error::file(&out, e))?;
            for (i, s) in write_ranking(&out, &scores)?.iter().enumerate() {
                println!("{:>3}. {:+.4} {}", i + 1, s.rank_key, s.subject_id);
            }
        }
        Command::Report { archive } => print!("{}", summary(&read_report(&archive)?)),
        Command::Serve { mode } => {
            let tb = Testbed::start(config).await?;
            tb.gateway.set_mode(match mode {
                ServeMode::Replay => Mode::Replay,
                ServeMode::Record => Mode::Record,
                ServeMode::Live => Mode::Live,
            });
            info!(proxy = %tb.gateway.addr(), site = %tb.site_addr(), "serving; Ctrl-C to stop");
            println!("proxy {} site {}", tb.gateway.addr(), tb.site_addr());
            tokio::signal::ctrl_c().await?;
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
