//! The session currently being captured.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use gauntlet_core::archive::Archive;
use gauntlet_core::dom::DomSnapshot;
use gauntlet_core::flow::{write_flow_line, CapturedFlow, CertMode};
use gauntlet_core::leak::ProbeReport;
use tracing::debug;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionStats {
    pub flows: usize,
    pub snapshots: usize,
    pub probes: usize,
    pub malformed: usize,
}

/// Flow log and collector sink of one session. The log has a single writer.
pub struct ActiveSession {
    pub id: String,
    pub cert_mode: CertMode,
    archive: Archive,
    log: Mutex<BufWriter<File>>,
    next_flow: AtomicUsize,
    snapshots: AtomicUsize,
    probes: AtomicUsize,
    malformed: AtomicUsize,
}

impl ActiveSession {
    pub fn open(archive: &Archive, id: &str, cert_mode: CertMode) -> Result<Self> {
        archive.create_session(id)?;
        let path = archive.flows_path(id);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::file(&path, e))?;
        Ok(ActiveSession {
            id: id.to_string(),
            cert_mode,
            archive: archive.clone(),
            log: Mutex::new(BufWriter::new(file)),
            next_flow: AtomicUsize::new(0),
            snapshots: AtomicUsize::new(0),
            probes: AtomicUsize::new(0),
            malformed: AtomicUsize::new(0),
        })
    }

    pub fn next_flow_id(&self) -> String {
        let n = self.next_flow.fetch_add(1, Ordering::SeqCst);
        format!("{}-{n:06}", self.id)
    }

    pub fn log(&self, flow: &CapturedFlow) -> Result<()> {
        debug!(flow = %flow.flow_id, url = %flow.url, status = ?flow.status, "flow");
        let mut w = self.log.lock().expect("flow log poisoned");
        let path = self.archive.flows_path(&self.id);
        write_flow_line(&mut *w, flow).map_err(|e| Error::file(&path, e))?;
        w.flush().map_err(|e| Error::file(&path, e))
    }

    pub fn store_snapshot(&self, snap: &DomSnapshot) -> Result<()> {
        let n = self.snapshots.fetch_add(1, Ordering::SeqCst);
        Ok(self.archive.write_snapshot(&self.id, n, snap)?)
    }

    pub fn store_probe(&self, report: &ProbeReport) -> Result<()> {
        let n = self.probes.fetch_add(1, Ordering::SeqCst);
        Ok(self.archive.write_probe(&self.id, n, report)?)
    }

    pub fn store_malformed(&self, body: &[u8]) -> Result<()> {
        let n = self.malformed.fetch_add(1, Ordering::SeqCst);
        self.archive.write_malformed(&self.id, n, body)?;
        Ok(())
    }

    pub fn stats(&self) -> SessionStats {
        SessionStats {
            flows: self.next_flow.load(Ordering::SeqCst),
            snapshots: self.snapshots.load(Ordering::SeqCst),
            probes: self.probes.load(Ordering::SeqCst),
            malformed: self.malformed.load(Ordering::SeqCst),
        }
    }
}
