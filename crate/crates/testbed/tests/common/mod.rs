#![allow(dead_code)]

use std::sync::Arc;

use gauntlet_core::score::PrivacyScore;
use gauntlet_testbed::ca::CertAuthority;
use gauntlet_testbed::config::Config;
use gauntlet_testbed::orchestrator::Testbed;
use tempfile::TempDir;

pub async fn testbed() -> (Testbed, TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let mut config = Config::default();
    config.paths.data_dir = dir.path().to_path_buf();
    config.ports.proxy = 0;
    config.ports.site = 0;
    let ca = Arc::new(CertAuthority::ephemeral().unwrap());
    (Testbed::start_with_ca(config, ca).await.unwrap(), dir)
}

/// [blocks, https, webapi, allows, cert, pii, history]
pub fn vector(s: &PrivacyScore) -> [f64; 7] {
    [
        f64::from(s.protective.blocks_tracking_content),
        f64::from(s.protective.https_default),
        f64::from(s.protective.webapi_blocking),
        f64::from(s.harmful.allows_tracking_requests),
        f64::from(s.harmful.cert_validation_fail),
        s.harmful.pii_exposure,
        f64::from(s.harmful.history_sharing),
    ]
}
