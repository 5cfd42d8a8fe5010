use std::time::{SystemTime, UNIX_EPOCH};

use nck_core::analysis::{BoundReport, Verdict};
use nck_core::regularized::CUTOFF_VERSION;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hash of a config after parsing: field order and formatting in the source file do
/// not matter because the parsed value is re-serialized with sorted keys.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let value = serde_json::to_value(cfg).expect("config serializes");
    let canonical = value.to_string();
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct VerdictSummary {
    pub pass: usize,
    pub fail: usize,
    pub not_applicable: usize,
}

impl VerdictSummary {
    pub fn of(reports: &[BoundReport]) -> Self {
        let count = |v: Verdict| reports.iter().filter(|r| r.verdict == v).count();
        VerdictSummary {
            pass: count(Verdict::Pass),
            fail: count(Verdict::Fail),
            not_applicable: count(Verdict::NotApplicable),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub cutoff_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub verdicts: VerdictSummary,
}

impl RunManifest {
    pub fn new(config_hash: String, started_unix: f64, reports: &[BoundReport]) -> Self {
        RunManifest {
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            cutoff_version: CUTOFF_VERSION.to_string(),
            started_unix,
            finished_unix: now(),
            verdicts: VerdictSummary::of(reports),
        }
    }
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}
