//! Scenario runner: configuration, pipelines, reports and plot data.

pub mod config;
pub mod plots;
pub mod report;
pub mod scenarios;
pub mod verify;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::{Config, Scenario};
pub use report::Report;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: qharm::Error,
    },
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{0} check(s) failed")]
    Checks(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Io { .. } => 2,
            CliError::Stage { .. } => 3,
            CliError::Checks(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), msg: e.to_string() }
    }
}

/// Tag a library error with the pipeline stage it came from.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageExt<T> for qharm::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Create `parent/<prefix>-NNNN` with the first free number. Existing
/// directories are never reused.
pub fn fresh_dir(parent: &Path, prefix: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    for k in 1..10_000 {
        let dir = parent.join(format!("{prefix}-{k:04}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(&dir, e)),
        }
    }
    Err(CliError::io(parent, "no free run directory"))
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub report: Report,
}

impl RunOutcome {
    pub fn failed_checks(&self) -> usize {
        self.report.checks.iter().filter(|c| !c.passed).count()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Parent of the run directory; defaults to `output.dir` next to the config.
    pub out: Option<PathBuf>,
    /// Record the wall-clock start time in the report.
    pub timestamps: bool,
}

/// Load a configuration file, run its scenario and write the run directory.
pub fn run_config_file(path: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config { path: path.display().to_string(), msg: e.to_string() })?;
    let cfg = Config::parse(&text)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    run_config(&cfg, &base, opts)
}

/// Run a parsed configuration. Relative paths resolve against `base`.
pub fn run_config(cfg: &Config, base: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let measure = if cfg.scenario == Scenario::ReifCheck {
        let p = base.join(&cfg.analysis.reif.measure);
        Some(fs::read_to_string(&p).map_err(|e| CliError::Config { path: "analysis.reif.measure".into(), msg: format!("{}: {e}", p.display()) })?)
    } else {
        None
    };
    let started = opts.timestamps.then(|| {
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    });
    let out = scenarios::run(cfg, measure.as_deref())?;
    let mut report = out.report;
    report.started_unix = started;

    let parent = opts.out.clone().unwrap_or_else(|| base.join(&cfg.output.dir));
    let dir = fresh_dir(&parent, "run")?;
    write_file(&dir.join("config.toml"), toml::to_string(cfg).expect("config serializes").as_bytes())?;
    write_file(&dir.join("report.json"), report.to_json().as_bytes())?;
    if let Some(m) = &measure {
        write_file(&dir.join("measure.txt"), m.as_bytes())?;
    }
    if let Some(u) = &out.field {
        if cfg.output.snapshots {
            let mut full = Vec::new();
            u.write_snapshot(&mut full, |_| true).stage("snapshot")?;
            write_file(&dir.join("field.qf"), &full)?;
        }
        let mut bnd = Vec::new();
        u.write_snapshot(&mut bnd, |k| k == qharm::NodeKind::Boundary).stage("snapshot")?;
        write_file(&dir.join("boundary.qf"), &bnd)?;
    }
    plots::emit_plots(&report, &dir)?;
    Ok(RunOutcome { dir, report })
}
