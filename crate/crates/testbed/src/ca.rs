//! Test certificate authorities and per-host leaf certificates.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use gauntlet_core::flow::CertMode;
use rcgen::{BasicConstraints, CertificateParams, DnType, IsCa, Issuer, KeyPair, KeyUsagePurpose};
use rustls::crypto::CryptoProvider;
use rustls::pki_types::{CertificateDer, PrivateKeyDer, PrivatePkcs8KeyDer};
use rustls::ServerConfig;
use tracing::info;

use crate::error::{Error, Result};

pub fn crypto_provider() -> Arc<CryptoProvider> {
    Arc::new(rustls::crypto::ring::default_provider())
}

/// Where a CA's certificate and key live on disk.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CaPaths {
    pub cert: PathBuf,
    pub key: PathBuf,
}

struct Ca {
    cert_pem: String,
    cert_der: CertificateDer<'static>,
    issuer: Issuer<'static, KeyPair>,
}

impl Ca {
    fn generate(common_name: &str) -> Result<(Ca, String)> {
        let key = KeyPair::generate()?;
        let mut params = CertificateParams::new(Vec::<String>::new())?;
        params
            .distinguished_name
            .push(DnType::CommonName, common_name);
        params
            .distinguished_name
            .push(DnType::OrganizationName, "gauntlet testbed");
        params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
        params.key_usages = vec![
            KeyUsagePurpose::KeyCertSign,
            KeyUsagePurpose::CrlSign,
            KeyUsagePurpose::DigitalSignature,
        ];
        let cert = params.self_signed(&key)?;
        let key_pem = key.serialize_pem();
        let ca = Ca {
            cert_pem: cert.pem(),
            cert_der: cert.der().clone(),
            issuer: Issuer::new(params, key),
        };
        Ok((ca, key_pem))
    }

    fn from_pem(cert_pem: &str, key_pem: &str) -> Result<Ca> {
        let key = KeyPair::from_pem(key_pem)?;
        let issuer = Issuer::from_ca_cert_pem(cert_pem, key)?;
        let der = rustls::pki_types::pem::PemObject::from_pem_slice(cert_pem.as_bytes())
            .map_err(|e| Error::Config(format!("CA certificate PEM: {e}")))?;
        Ok(Ca {
            cert_pem: cert_pem.to_string(),
            cert_der: der,
            issuer,
        })
    }

    /// Loads the pair, generating and writing it first if either file is missing.
    fn load_or_create(paths: &CaPaths, common_name: &str) -> Result<Ca> {
        if paths.cert.is_file() && paths.key.is_file() {
            let cert = read(&paths.cert)?;
            let key = read(&paths.key)?;
            return Ca::from_pem(&cert, &key);
        }
        let (ca, key_pem) = Ca::generate(common_name)?;
        for p in [&paths.cert, &paths.key] {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
            }
        }
        std::fs::write(&paths.cert, &ca.cert_pem).map_err(|e| Error::file(&paths.cert, e))?;
        std::fs::write(&paths.key, key_pem).map_err(|e| Error::file(&paths.key, e))?;
        info!(cert = %paths.cert.display(), "generated {common_name}");
        Ok(ca)
    }
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::file(p, e))
}

/// The trusted test CA (installed in subjects' trust stores) and an
/// untrusted one used to probe certificate validation.
pub struct CertAuthority {
    trusted: Ca,
    untrusted: Ca,
    configs: Mutex<HashMap<(CertMode, String), Arc<ServerConfig>>>,
}

impl CertAuthority {
    pub fn load_or_create(trusted: &CaPaths, untrusted: &CaPaths) -> Result<Self> {
        Ok(CertAuthority {
            trusted: Ca::load_or_create(trusted, "gauntlet trusted test CA")?,
            untrusted: Ca::load_or_create(untrusted, "gauntlet untrusted test CA")?,
            configs: Mutex::new(HashMap::new()),
        })
    }

    /// Fresh in-memory authorities, nothing written to disk.
    pub fn ephemeral() -> Result<Self> {
        Ok(CertAuthority {
            trusted: Ca::generate("gauntlet trusted test CA")?.0,
            untrusted: Ca::generate("gauntlet untrusted test CA")?.0,
            configs: Mutex::new(HashMap::new()),
        })
    }

    fn ca(&self, mode: CertMode) -> &Ca {
        match mode {
            CertMode::TrustedCa => &self.trusted,
            CertMode::UntrustedCa => &self.untrusted,
        }
    }

    pub fn root_der(&self, mode: CertMode) -> CertificateDer<'static> {
        self.ca(mode).cert_der.clone()
    }

    pub fn root_pem(&self, mode: CertMode) -> &str {
        &self.ca(mode).cert_pem
    }

    /// Issues `[leaf, ca]` for `host` under `mode`.
    pub fn issue(
        &self,
        mode: CertMode,
        host: &str,
    ) -> Result<(Vec<CertificateDer<'static>>, PrivateKeyDer<'static>)> {
        let ca = self.ca(mode);
        let key = KeyPair::generate()?;
        let mut params = CertificateParams::new(vec![host.to_string()])?;
        params.distinguished_name.push(DnType::CommonName, host);
        params.use_authority_key_identifier_extension = true;
        let leaf = params.signed_by(&key, &ca.issuer)?;
        let key_der = PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(key.serialize_der()));
        Ok((vec![leaf.der().clone(), ca.cert_der.clone()], key_der))
    }

    /// Server config presenting a leaf for `host`, cached per (mode, host).
    pub fn server_config(&self, mode: CertMode, host: &str) -> Result<Arc<ServerConfig>> {
        let host = host.to_ascii_lowercase();
        let k = (mode, host.clone());
        if let Some(c) = self.configs.lock().expect("cert cache poisoned").get(&k) {
            return Ok(c.clone());
        }
        let (chain, key) = self.issue(mode, &host)?;
        let mut cfg = ServerConfig::builder_with_provider(crypto_provider())
            .with_safe_default_protocol_versions()?
            .with_no_client_auth()
            .with_single_cert(chain, key)?;
        cfg.alpn_protocols = vec![b"http/1.1".to_vec()];
        let cfg = Arc::new(cfg);
        self.configs
            .lock()
            .expect("cert cache poisoned")
            .insert(k, cfg.clone());
        Ok(cfg)
    }
}
