//! Run report. Serialization is deterministic: map keys are sorted, floats
//! print in shortest round-trip form, and the only clock-dependent field is
//! optional.

use serde::{Deserialize, Serialize};

use crate::config::Config;

pub const REPORT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

/// θ, pinch and P along radii at one centre. Missing values are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileData {
    pub label: String,
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub theta: Vec<Option<f64>>,
    pub pinch: Vec<Option<f64>>,
    pub p: Vec<Option<f64>>,
}

/// Ascending eigenvalues of r^(2-m) Σ_{B_r} M h^m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumData {
    pub label: String,
    pub center: Vec<f64>,
    pub radius: f64,
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinkowskiData {
    pub label: String,
    pub radii: Vec<f64>,
    pub volumes: Vec<f64>,
    pub slope: Option<f64>,
}

impl MinkowskiData {
    pub fn new(label: &str, t: &qharm::strata::MinkowskiTable) -> Self {
        Self { label: label.into(), radii: t.radii.clone(), volumes: t.volumes.clone(), slope: finite(t.slope) }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlotData {
    pub profiles: Vec<ProfileData>,
    pub spectra: Vec<SpectrumData>,
    pub minkowski: Vec<MinkowskiData>,
    /// Beta-number profile as CSV text (reif_check).
    pub beta_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: u32,
    pub scenario: String,
    pub seed: u64,
    pub config: Config,
    /// Scenario-specific results.
    pub results: serde_json::Value,
    pub plots: PlotData,
    pub checks: Vec<Check>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_unix: Option<u64>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}
