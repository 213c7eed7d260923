//! The evaluation report written by `evpan evaluate`.

use std::path::Path;

use evpan_core::metrics::{EvalConfig, MetricReport};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const TOOL: &str = "evpan";
pub const UPQ_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub stem: String,
    pub pq: Option<f64>,
    pub pece: f64,
    pub uece: Option<f64>,
    pub matches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub tool: String,
    pub version: String,
    pub config: EvalConfig,
    pub stems: Vec<String>,
    #[serde(flatten)]
    pub metrics: MetricReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_image: Option<Vec<ImageEntry>>,
}

impl ReportFile {
    pub fn to_json(&self) -> Result<String, CliError> {
        if !self.metrics.check_upq_identity(UPQ_TOLERANCE) {
            return Err(CliError::Validation("report violates upq = (1 - pece) * pq".into()));
        }
        Ok(serde_json::to_string_pretty(self).expect("report serializes"))
    }
}

/// Writes through a sibling temporary file so a failure never leaves a
/// partial report behind.
pub fn write_report(path: &Path, report: &ReportFile) -> Result<(), CliError> {
    let text = report.to_json()?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    std::fs::write(tmp, text).map_err(|e| CliError::io(tmp, e))?;
    std::fs::rename(tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn read_report(path: &Path) -> Result<ReportFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(path, e))
}
