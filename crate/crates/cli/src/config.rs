//! Versioned TOML run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Sqrt2,
    Torus3,
    SimplyConnectedControl,
    StrataSweep,
    ReifCheck,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Sqrt2 => "sqrt2",
            Scenario::Torus3 => "torus3",
            Scenario::SimplyConnectedControl => "simply_connected_control",
            Scenario::StrataSweep => "strata_sweep",
            Scenario::ReifCheck => "reif_check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Unit ball sampled with spacing h = 1/n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeConfig {
    pub n: usize,
    /// First level of the coarse-to-fine ladder (sqrt2 only).
    pub coarse_n: usize,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self { n: 32, coarse_n: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub omega: f64,
    pub max_sweeps: usize,
    pub shuffle_cadence: usize,
    pub shuffle_prob: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { tol: 1e-9, omega: 1.5, max_sweeps: 5000, shuffle_cadence: 10, shuffle_prob: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub kernel: String,
    /// Density threshold of the singular proxy.
    pub eps0: f64,
    /// Smallest proxy radius, in units of h.
    pub proxy_r_min_cells: f64,
    /// Cluster linking distance, in units of h.
    pub cluster_link_cells: f64,
    /// Scale-matched Minkowski radii, in units of h.
    pub minkowski_cells: Vec<f64>,
    /// Radii of the θ profiles at the centre.
    pub profile_radii: Vec<f64>,
    /// Radii of the energy-matrix spectra at the centre.
    pub spectrum_radii: Vec<f64>,
    pub curve: CurveConfig,
    pub mollify_radius: f64,
    pub strata: StrataConfig,
    pub reif: ReifConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            kernel: "quadratic".into(),
            eps0: 0.15,
            proxy_r_min_cells: 2.0,
            cluster_link_cells: 2.0,
            minkowski_cells: vec![2.0, 4.0, 8.0],
            profile_radii: vec![0.0625, 0.125, 0.25, 0.5],
            spectrum_radii: vec![0.125, 0.25, 0.5],
            curve: CurveConfig::default(),
            mollify_radius: 0.2,
            strata: StrataConfig::default(),
            reif: ReifConfig::default(),
        }
    }
}

/// Branch points a, b of the double cover, as (re, im).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveConfig {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self { a: [1.0, 0.0], b: [-1.0, 0.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelField {
    /// Two sheets at antipodal phase of the angle about the x3 axis.
    Axial,
    /// x / |x| into S².
    Hedgehog,
    /// 0-homogeneous extension of the torus datum.
    Torus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrataConfig {
    pub field: ModelField,
    /// Relax the model field before analysis.
    pub relax: bool,
    pub eps: f64,
    pub r_min: f64,
    pub s_max: f64,
    /// Radius of the ball of nodes examined.
    pub window_radius: f64,
    /// Centres of the symmetry reports.
    pub report_centers: Vec<[f64; 3]>,
    pub report_radius: f64,
    /// Effective-spanning scale and energy cut of the covering.
    pub rho: f64,
    pub delta: f64,
    pub covering_k: usize,
    pub covering_radius: f64,
    pub covering_floor: f64,
    pub covering_depth_cap: usize,
    pub minkowski_radii: Vec<f64>,
}

impl Default for StrataConfig {
    fn default() -> Self {
        Self {
            field: ModelField::Axial,
            relax: false,
            eps: 8.0,
            r_min: 0.125,
            s_max: 0.25,
            window_radius: 0.4,
            report_centers: vec![[0.0, 0.0, 0.0], [0.3, 0.0, 0.0], [0.0, 0.0, 0.3]],
            report_radius: 0.2,
            rho: 0.2,
            delta: 0.5,
            covering_k: 1,
            covering_radius: 0.5,
            covering_floor: 0.04,
            covering_depth_cap: 6,
            minkowski_radii: vec![0.0625, 0.125, 0.25],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReifConfig {
    /// Measure file, relative to the configuration file.
    pub measure: String,
    pub k: usize,
    pub delta_r: f64,
    /// Radius of the ball placed on each atom; half the atom separation if absent.
    pub ball_radius: Option<f64>,
}

impl Default for ReifConfig {
    fn default() -> Self {
        Self { measure: String::new(), k: 1, delta_r: 0.01, ball_radius: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Parent of the run-NNNN directories, relative to the configuration file.
    pub dir: String,
    pub snapshots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "runs".into(), snapshots: true }
    }
}

fn bad(path: &str, msg: impl Into<String>) -> CliError {
    CliError::Config { path: path.into(), msg: msg.into() }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let path = e
                .span()
                .map(|s| format!("line {}", text[..s.start].matches('\n').count() + 1))
                .unwrap_or_else(|| "<root>".into());
            bad(&path, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(&path.display().to_string(), e.to_string()))?;
        Self::parse(&text)
    }

    pub fn h(&self) -> f64 {
        1.0 / self.lattice.n as f64
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(bad("version", format!("unsupported version {} (expected {CONFIG_VERSION})", self.version)));
        }
        let l = &self.lattice;
        if l.n < 4 {
            return Err(bad("lattice.n", "need at least 4 cells per unit length"));
        }
        if l.coarse_n < 4 || l.coarse_n > l.n {
            return Err(bad("lattice.coarse_n", "must lie in [4, lattice.n]"));
        }
        let s = &self.solver;
        if !(s.tol > 0.0) {
            return Err(bad("solver.tol", "must be positive"));
        }
        if !(s.omega > 0.0 && s.omega < 2.0) {
            return Err(bad("solver.omega", "must lie in (0, 2)"));
        }
        if s.max_sweeps == 0 {
            return Err(bad("solver.max_sweeps", "must be positive"));
        }
        if !(0.0..=1.0).contains(&s.shuffle_prob) {
            return Err(bad("solver.shuffle_prob", "must lie in [0, 1]"));
        }
        let a = &self.analysis;
        qharm::monotone::Kernel::by_name(&a.kernel).map_err(|e| bad("analysis.kernel", e.to_string()))?;
        if !(a.eps0 > 0.0) {
            return Err(bad("analysis.eps0", "must be positive"));
        }
        if a.proxy_r_min_cells < 2.0 {
            return Err(bad("analysis.proxy_r_min_cells", "proxy radii below 2h are under-resolved"));
        }
        if !(a.cluster_link_cells > 0.0) {
            return Err(bad("analysis.cluster_link_cells", "must be positive"));
        }
        if a.minkowski_cells.iter().any(|&c| c < 2.0) {
            return Err(bad("analysis.minkowski_cells", "radii below 2h are under-resolved"));
        }
        for (key, v) in [("analysis.profile_radii", &a.profile_radii), ("analysis.spectrum_radii", &a.spectrum_radii)] {
            if v.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
                return Err(bad(key, "radii must lie in (0, 1)"));
            }
        }
        if !(a.mollify_radius > 0.0 && a.mollify_radius < 1.0) {
            return Err(bad("analysis.mollify_radius", "must lie in (0, 1)"));
        }
        let st = &a.strata;
        if !(st.eps > 0.0 && st.rho > 0.0 && st.delta > 0.0 && st.covering_floor > 0.0) {
            return Err(bad("analysis.strata", "eps, rho, delta and covering_floor must be positive"));
        }
        if !(st.r_min > 0.0 && st.r_min <= st.s_max) {
            return Err(bad("analysis.strata.r_min", "need 0 < r_min <= s_max"));
        }
        if st.covering_k >= 3 {
            return Err(bad("analysis.strata.covering_k", "must be below 3"));
        }
        let r = &a.reif;
        if self.scenario == Scenario::ReifCheck && r.measure.is_empty() {
            return Err(bad("analysis.reif.measure", "reif_check needs a measure file"));
        }
        if !(r.delta_r > 0.0) {
            return Err(bad("analysis.reif.delta_r", "must be positive"));
        }
        if let Some(b) = r.ball_radius {
            if !(b > 0.0) {
                return Err(bad("analysis.reif.ball_radius", "must be positive"));
            }
        }
        if self.output.dir.is_empty() {
            return Err(bad("output.dir", "must not be empty"));
        }
        Ok(())
    }
}
