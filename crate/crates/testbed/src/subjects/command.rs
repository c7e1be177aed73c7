//! Driver for real subjects controlled through operator-supplied shell
//! hooks (typically wrappers around `adb` and UI automation).
//!
//! Templates may use `{url}`, `{package}` and `{proxy}`. The launch hook
//! exits with [`NEEDS_INTERACTION_EXIT`] when the subject cannot reach a
//! page without manual steps. The reset hook prints the new device profile
//! as JSON on stdout.

use std::time::Duration;

use gauntlet_core::profile::DeviceProfile;
use gauntlet_core::subject::Subject;
use serde::{Deserialize, Serialize};
use tokio::process::Command;
use tracing::{debug, info};

use super::{Env, Launch};
use crate::error::{Error, Result};

pub const NEEDS_INTERACTION_EXIT: i32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandHooks {
    pub launch: String,
    pub open: String,
    pub stop: String,
    pub reset: String,
    /// Time given to the device to finish loading after `open` returns.
    #[serde(default = "default_settle")]
    pub settle_ms: u64,
}

fn default_settle() -> u64 {
    5_000
}

pub struct CommandSubject {
    pub subject: Subject,
    pub hooks: CommandHooks,
    proxy: String,
}

impl CommandSubject {
    pub fn new(subject: Subject, hooks: CommandHooks) -> Self {
        CommandSubject {
            subject,
            hooks,
            proxy: String::new(),
        }
    }

    fn render(&self, template: &str, url: &str) -> String {
        template
            .replace("{url}", url)
            .replace("{package}", &self.subject.package_name)
            .replace("{proxy}", &self.proxy)
    }

    async fn run(&self, template: &str, url: &str) -> Result<std::process::Output> {
        let cmd = self.render(template, url);
        debug!(%cmd, "running hook");
        Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .kill_on_drop(true)
            .output()
            .await
            .map_err(|e| self.err(format!("hook {cmd:?} failed to start: {e}")))
    }

    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Subject {
            subject: self.subject.package_name.clone(),
            detail: detail.into(),
        }
    }

    fn check(&self, what: &str, out: &std::process::Output) -> Result<()> {
        if out.status.success() {
            return Ok(());
        }
        Err(self.err(format!(
            "{what} hook exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )))
    }

    pub async fn reset_profile(&mut self) -> Result<DeviceProfile> {
        let out = self.run(&self.hooks.reset, "").await?;
        self.check("reset", &out)?;
        let p: DeviceProfile = serde_json::from_slice(&out.stdout)
            .map_err(|e| self.err(format!("reset hook printed no device profile: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub async fn launch(&mut self, env: &Env) -> Result<Launch> {
        self.proxy = env.proxy.to_string();
        let out = self.run(&self.hooks.launch, "").await?;
        if out.status.code() == Some(NEEDS_INTERACTION_EXIT) {
            info!(subject = %self.subject.package_name, "launch needs interaction");
            return Ok(Launch::NeedsInteraction);
        }
        self.check("launch", &out)?;
        Ok(Launch::Ready)
    }

    pub async fn open(&mut self, url: &str) -> Result<()> {
        let out = self.run(&self.hooks.open, url).await?;
        self.check("open", &out)?;
        tokio::time::sleep(Duration::from_millis(self.hooks.settle_ms)).await;
        Ok(())
    }

    pub async fn stop(&mut self) -> Result<()> {
        let out = self.run(&self.hooks.stop, "").await?;
        self.check("stop", &out)
    }
}
