//! Subjects under test and the drivers that operate them.

pub mod canned;
pub mod client;
pub mod command;
pub mod profile;
pub mod simulated;

use std::net::SocketAddr;
use std::time::Duration;

use gauntlet_core::archive::Compatibility;
use gauntlet_core::profile::DeviceProfile;
use gauntlet_core::subject::Subject;
use rustls::pki_types::CertificateDer;
use tracing::{info, warn};

pub use command::{CommandHooks, CommandSubject};
pub use simulated::{PageLoad, SimulatedSubject};

use crate::error::Result;

/// What a subject needs to reach the testbed.
#[derive(Debug, Clone)]
pub struct Env {
    pub proxy: SocketAddr,
    /// Root the device trusts; the untrusted CA is never installed.
    pub trusted_root: CertificateDer<'static>,
    pub timeout: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Launch {
    Ready,
    NeedsInteraction,
}

pub enum SubjectDriver {
    Simulated(Box<SimulatedSubject>),
    Command(Box<CommandSubject>),
}

impl SubjectDriver {
    pub fn subject(&self) -> &Subject {
        match self {
            SubjectDriver::Simulated(s) => &s.subject,
            SubjectDriver::Command(c) => &c.subject,
        }
    }

    pub async fn reset_profile(&mut self) -> Result<DeviceProfile> {
        match self {
            SubjectDriver::Simulated(s) => Ok(s.reset_profile()),
            SubjectDriver::Command(c) => c.reset_profile().await,
        }
    }

    pub async fn launch(&mut self, env: &Env) -> Result<Launch> {
        match self {
            SubjectDriver::Simulated(s) => {
                s.launch(env).await?;
                Ok(if s.spec.needs_interaction {
                    Launch::NeedsInteraction
                } else {
                    Launch::Ready
                })
            }
            SubjectDriver::Command(c) => c.launch(env).await,
        }
    }

    pub async fn open(&mut self, target: &str) -> Result<()> {
        match self {
            SubjectDriver::Simulated(s) => s.open(target).await.map(|_| ()),
            SubjectDriver::Command(c) => c.open(target).await,
        }
    }

    pub async fn stop(&mut self) {
        let r = match self {
            SubjectDriver::Simulated(s) => {
                s.stop();
                Ok(())
            }
            SubjectDriver::Command(c) => c.stop().await,
        };
        if let Err(e) = r {
            warn!(error = %e, "stop failed");
        }
    }

    /// Launches the subject and opens one page. A launch that does not
    /// finish within `launch_timeout` marks the subject incompatible.
    /// The caller confirms the page load against captured traffic.
    pub async fn probe_compatibility(
        &mut self,
        env: &Env,
        page: &str,
        launch_timeout: Duration,
    ) -> Compatibility {
        let verdict = match tokio::time::timeout(launch_timeout, self.launch(env)).await {
            Err(_) => {
                info!(subject = %self.subject().package_name, "launch timed out");
                Compatibility::Incompatible
            }
            Ok(Err(e)) => {
                info!(subject = %self.subject().package_name, error = %e, "launch failed");
                Compatibility::Incompatible
            }
            Ok(Ok(Launch::NeedsInteraction)) => Compatibility::NeedsInteraction,
            Ok(Ok(Launch::Ready)) => match self.open(page).await {
                Ok(()) => Compatibility::Compatible,
                Err(e) => {
                    info!(subject = %self.subject().package_name, error = %e, "compatibility page failed");
                    Compatibility::Incompatible
                }
            },
        };
        self.stop().await;
        verdict
    }
}
