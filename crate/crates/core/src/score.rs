//! Multidimensional privacy score and ranking.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::connsec::{CertValidation, ConnSecReport, DefaultProtocol};
use crate::dom::DomDiffSummary;
use crate::leak::{AllowedTrackingReport, Feature, HistoryFinding, PiiFinding, WebApiExposure};
use crate::profile::{PiiTier, PiiType};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierWeights {
    pub non_resettable: f64,
    pub resettable: f64,
    pub other: f64,
}

impl Default for TierWeights {
    fn default() -> Self {
        TierWeights {
            non_resettable: 1.0,
            resettable: 0.5,
            other: 0.25,
        }
    }
}

impl TierWeights {
    pub fn weight(&self, t: PiiType) -> f64 {
        match t.tier() {
            PiiTier::NonResettable => self.non_resettable,
            PiiTier::Resettable => self.resettable,
            PiiTier::Other => self.other,
        }
    }

    /// Sum of weights over every defined PII type.
    pub fn max_total(&self) -> f64 {
        PiiType::ALL.iter().map(|t| self.weight(*t)).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        TierWeights {
            non_resettable: self.non_resettable * c,
            resettable: self.resettable * c,
            other: self.other * c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub weights: TierWeights,
    /// Whether WebAPI default-deny counts as protective.
    pub webapi_protective: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            weights: TierWeights::default(),
            webapi_protective: true,
        }
    }
}

/// Per-subject analysis outputs. `None` marks a component that could not
/// be produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FindingsBundle {
    pub dom: Option<DomDiffSummary>,
    pub allowed_tracking: Option<AllowedTrackingReport>,
    pub connsec: Option<ConnSecReport>,
    pub pii: Option<Vec<PiiFinding>>,
    pub history: Option<Vec<HistoryFinding>>,
    pub webapi: Option<WebApiExposure>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protective {
    pub blocks_tracking_content: u8,
    pub https_default: u8,
    pub webapi_blocking: u8,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Harmful {
    pub allows_tracking_requests: u8,
    pub cert_validation_fail: u8,
    pub pii_exposure: f64,
    pub history_sharing: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyScore {
    pub subject_id: String,
    pub protective: Protective,
    pub harmful: Harmful,
    pub protective_total: f64,
    pub harm_total: f64,
    pub rank_key: f64,
    /// Bundle components that were absent and scored 0.
    pub incomplete: Vec<String>,
    pub weights: TierWeights,
}

fn bit(b: bool) -> u8 {
    u8::from(b)
}

/// Normalized tier sum over the distinct exposed PII types.
pub fn pii_exposure(findings: &[PiiFinding], weights: &TierWeights) -> f64 {
    let types: BTreeSet<PiiType> = findings.iter().map(|f| f.pii_type).collect();
    let sum = types.iter().fold(0.0, |acc, t| acc + weights.weight(*t));
    let max = weights.max_total();
    if max <= 0.0 {
        0.0
    } else {
        quantize((sum / max).min(1.0))
    }
}

/// Rounds away float noise so that scaling every weight by the same factor
/// cannot reorder ties.
fn quantize(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

pub fn score_subject(
    subject_id: &str,
    bundle: &FindingsBundle,
    config: &ScoreConfig,
) -> PrivacyScore {
    let mut incomplete = Vec::new();
    let mut note = |present: bool, name: &str| {
        if !present {
            incomplete.push(name.to_string());
        }
    };
    note(bundle.dom.is_some(), "dom");
    note(bundle.allowed_tracking.is_some(), "allowed_tracking");
    note(bundle.connsec.is_some(), "connsec");
    note(bundle.pii.is_some(), "pii");
    note(bundle.history.is_some(), "history");
    note(bundle.webapi.is_some(), "webapi");

    let protective = Protective {
        blocks_tracking_content: bit(bundle
            .dom
            .as_ref()
            .is_some_and(|d| d.blocks_tracking_content())),
        https_default: bit(bundle
            .connsec
            .as_ref()
            .is_some_and(|c| c.default_protocol == DefaultProtocol::Https)),
        webapi_blocking: bit(config.webapi_protective
            && bundle
                .webapi
                .as_ref()
                .is_some_and(|w| w.default_or_stricter())),
    };
    let harmful = Harmful {
        allows_tracking_requests: bit(bundle
            .allowed_tracking
            .as_ref()
            .is_some_and(|a| a.allows_tracking)),
        cert_validation_fail: bit(bundle
            .connsec
            .as_ref()
            .is_some_and(|c| c.cert_validation == CertValidation::Accepted)),
        pii_exposure: bundle
            .pii
            .as_ref()
            .map(|p| pii_exposure(p, &config.weights))
            .unwrap_or(0.0),
        history_sharing: bit(bundle
            .history
            .as_ref()
            .is_some_and(|h| h.iter().any(|f| f.feature == Feature::None))),
    };
    let protective_total = f64::from(
        protective.blocks_tracking_content + protective.https_default + protective.webapi_blocking,
    );
    let harm_total = f64::from(
        harmful.allows_tracking_requests + harmful.cert_validation_fail + harmful.history_sharing,
    ) + harmful.pii_exposure;
    PrivacyScore {
        subject_id: subject_id.to_string(),
        protective,
        harmful,
        protective_total,
        harm_total,
        rank_key: harm_total - protective_total,
        incomplete,
        weights: config.weights,
    }
}

/// Ascending rank_key, ties by subject id.
pub fn rank(scores: &[PrivacyScore]) -> Vec<PrivacyScore> {
    let mut out = scores.to_vec();
    out.sort_by(|a, b| {
        a.rank_key
            .total_cmp(&b.rank_key)
            .then_with(|| a.subject_id.cmp(&b.subject_id))
    });
    out
}

pub const RANKING_CSV_HEADER: &str = "position,subject_id,rank_key,protective_total,harm_total,\
blocks_tracking_content,https_default,webapi_blocking,\
allows_tracking_requests,cert_validation_fail,pii_exposure,history_sharing";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Chart-ready stacked components, one row per subject in rank order.
pub fn ranking_csv(scores: &[PrivacyScore]) -> String {
    let mut out = String::from(RANKING_CSV_HEADER);
    out.push('\n');
    for (i, s) in rank(scores).iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            i + 1,
            csv_field(&s.subject_id),
            s.rank_key,
            s.protective_total,
            s.harm_total,
            s.protective.blocks_tracking_content,
            s.protective.https_default,
            s.protective.webapi_blocking,
            s.harmful.allows_tracking_requests,
            s.harmful.cert_validation_fail,
            s.harmful.pii_exposure,
            s.harmful.history_sharing,
        ));
    }
    out
}
