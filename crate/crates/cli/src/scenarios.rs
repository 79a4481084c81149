//! Built-in pipelines: construct, minimize, analyze, report.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use qharm::betareif::{beta_profile_csv, default_floor, rectifiability_sum, reifenberg_verdict, DiscreteMeasure};
use qharm::jacobi::{boundary_datum, degree, homogeneous_field, CurveParams, PlaneDatum, SphereDatum, SphereGrid, TorusDatum};
use qharm::lattice::FieldEnergy;
use qharm::monotone::{energy_profile, subharmonicity_check, Kernel, SquaredDistance};
use qharm::solver::{relax, ConvergenceReport, SolverConfig};
use qharm::strata::{
    build_covering, cluster_centroids, extract_stratum, minkowski_estimate, minkowski_scale_matched, singular_proxy,
    sorted_eigen, symmetry_report, CoverLabel, CoveringParams, StratumParams,
};
use qharm::{LatticeDomain, QField, TargetManifold};
use serde::Serialize;
use serde_json::json;

use crate::config::{Config, ModelField, Scenario};
use crate::report::{finite, Check, MinkowskiData, PlotData, ProfileData, Report, SpectrumData, REPORT_FORMAT};
use crate::{CliError, StageExt};

pub struct ScenarioOutput {
    pub report: Report,
    /// Final field, for snapshots.
    pub field: Option<QField>,
}

pub fn run(cfg: &Config, measure: Option<&str>) -> Result<ScenarioOutput, CliError> {
    let mut ctx = Ctx { cfg, plots: PlotData::default(), checks: Vec::new() };
    let (results, field) = match cfg.scenario {
        Scenario::Sqrt2 => sqrt2(&mut ctx)?,
        Scenario::Torus3 => {
            let datum = TorusDatum::new(curve(cfg)?, cfg.analysis.mollify_radius).stage("datum")?;
            sphere_pipeline(&mut ctx, &datum, true)?
        }
        Scenario::SimplyConnectedControl => {
            let datum = PlaneDatum::new(curve(cfg)?, cfg.analysis.mollify_radius).stage("datum")?;
            sphere_pipeline(&mut ctx, &datum, false)?
        }
        Scenario::StrataSweep => strata_sweep(&mut ctx)?,
        Scenario::ReifCheck => (reif_check(&mut ctx, measure.unwrap_or(""))?, None),
    };
    let report = Report {
        format: REPORT_FORMAT,
        scenario: cfg.scenario.name().into(),
        seed: cfg.seed,
        config: cfg.clone(),
        results,
        plots: ctx.plots,
        checks: ctx.checks,
        started_unix: None,
    };
    Ok(ScenarioOutput { report, field })
}

struct Ctx<'a> {
    cfg: &'a Config,
    plots: PlotData,
    checks: Vec<Check>,
}

impl Ctx<'_> {
    fn kernel(&self) -> Kernel {
        Kernel::by_name(&self.cfg.analysis.kernel).expect("validated")
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check::new(name, passed, detail));
    }

    fn profile(&mut self, label: &str, fe: &FieldEnergy, center: &[f64]) {
        let p = energy_profile(fe, &self.kernel(), center, &self.cfg.analysis.profile_radii);
        self.plots.profiles.push(ProfileData {
            label: label.into(),
            center: p.center,
            radii: p.radii,
            theta: p.theta.into_iter().map(finite).collect(),
            pinch: p.pinch.into_iter().map(finite).collect(),
            p: p.p.into_iter().map(finite).collect(),
        });
    }

    fn spectra(&mut self, label: &str, fe: &FieldEnergy, center: &[f64]) {
        let d = fe.domain();
        let m = d.m();
        for &r in &self.cfg.analysis.spectrum_radii {
            if !d.fits_ball(center, r) {
                continue;
            }
            let scale = r.powi(2 - m as i32);
            let mat: Vec<f64> = fe.matrix_in_ball(center, r).iter().map(|v| v * scale).collect();
            let (vals, _) = sorted_eigen(&mat, m);
            self.plots.spectra.push(SpectrumData { label: label.into(), center: center.to_vec(), radius: r, eigenvalues: vals });
        }
    }
}

fn curve(cfg: &Config) -> Result<CurveParams, CliError> {
    let c = &cfg.analysis.curve;
    CurveParams::new(Complex64::new(c.a[0], c.a[1]), Complex64::new(c.b[0], c.b[1]))
        .map_err(|e| CliError::Config { path: "analysis.curve".into(), msg: e.to_string() })
}

fn solver_config(cfg: &Config) -> SolverConfig {
    let s = &cfg.solver;
    SolverConfig {
        tol: s.tol,
        max_sweeps: s.max_sweeps,
        shuffle_cadence: s.shuffle_cadence,
        shuffle_prob: s.shuffle_prob,
        seed: cfg.seed,
        omega: s.omega,
        record_history: false,
    }
}

#[derive(Serialize)]
struct RelaxSummary {
    n: usize,
    h: f64,
    nodes: usize,
    sweeps: usize,
    converged: bool,
    initial_energy: f64,
    final_energy: f64,
    shuffle_accepted: usize,
}

fn relax_summary(u: &QField, n: usize, r: &ConvergenceReport) -> RelaxSummary {
    RelaxSummary {
        n,
        h: u.domain().h(),
        nodes: u.domain().active_nodes().count(),
        sweeps: r.sweeps,
        converged: r.converged,
        initial_energy: r.initial_energy,
        final_energy: r.final_energy,
        shuffle_accepted: r.shuffle_accepted,
    }
}

#[derive(Serialize)]
struct ProxySummary {
    eps0: f64,
    r_min: f64,
    size: usize,
    centroids: Vec<Vec<f64>>,
    /// Smallest distance of a flagged node to the unit sphere.
    boundary_distance: Option<f64>,
}

fn proxy(ctx: &Ctx, fe: &FieldEnergy) -> Result<ProxySummary, CliError> {
    let a = &ctx.cfg.analysis;
    let d = fe.domain();
    let h = d.h();
    let r_min = a.proxy_r_min_cells * h;
    let flagged = singular_proxy(fe, &ctx.kernel(), a.eps0, r_min).stage("singular_proxy")?;
    let centroids = cluster_centroids(d, &flagged, a.cluster_link_cells * h);
    let boundary_distance = flagged
        .iter()
        .map(|&i| 1.0 - d.position(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .reduce(f64::min);
    Ok(ProxySummary { eps0: a.eps0, r_min, size: flagged.len(), centroids, boundary_distance })
}

fn unit_disk(n: usize) -> Result<Arc<LatticeDomain>, CliError> {
    Ok(Arc::new(LatticeDomain::ball(2, 1.0 / n as f64, &[0.0, 0.0], 1.0, false).stage("lattice")?))
}

fn sqrt_sheets(x: &[f64]) -> Vec<f64> {
    let r = x[0].hypot(x[1]);
    let t = x[1].atan2(x[0]);
    let s = r.sqrt();
    let (c, d) = ((t / 2.0).cos() * s, (t / 2.0).sin() * s);
    vec![c, d, -c, -d]
}

/// ±√z on the unit disk, relaxed coarse to fine.
fn sqrt2(ctx: &mut Ctx) -> Result<(serde_json::Value, Option<QField>), CliError> {
    let cfg = ctx.cfg;
    let scfg = solver_config(cfg);
    let mut levels = vec![cfg.lattice.coarse_n];
    while levels.last().unwrap() * 2 <= cfg.lattice.n {
        levels.push(levels.last().unwrap() * 2);
    }
    if *levels.last().unwrap() != cfg.lattice.n {
        levels.push(cfg.lattice.n);
    }
    // start with the sheets pulled in toward the branch point
    let mut u = QField::from_fn(unit_disk(levels[0])?, TargetManifold::Euclidean(2), 2, |x| {
        let r = x[0].hypot(x[1]).sqrt();
        sqrt_sheets(x).iter().map(|v| v * r).collect()
    })
    .stage("construct")?;
    let mut summaries = Vec::new();
    for (j, &n) in levels.iter().enumerate() {
        if j > 0 {
            u = u.resample(unit_disk(n)?, |x| x.to_vec()).stage("resample")?;
        }
        u.apply_boundary_datum(|x| Ok(sqrt_sheets(x))).stage("boundary")?;
        let rep = relax(&mut u, &scfg).stage("relax")?;
        summaries.push(relax_summary(&u, n, &rep));
    }
    let target = 2.0 * PI;
    let errs: Vec<f64> = summaries.iter().map(|s| (s.final_energy - target).abs() / target).collect();
    let last = *errs.last().unwrap();
    ctx.check("energy_within_5pct", last <= 0.05, format!("relative error {last:.4e}"));
    ctx.check(
        "energy_improves_with_h",
        errs.windows(2).all(|w| w[1] < w[0]),
        format!("relative errors {errs:?}"),
    );
    ctx.check("solver_converged", summaries.iter().all(|s| s.converged), String::new());

    let fe = FieldEnergy::new(&u);
    let px = proxy(ctx, &fe)?;
    ctx.check("proxy_empty", px.size == 0, format!("{} flagged nodes", px.size));
    ctx.profile("center", &fe, &[0.0, 0.0]);
    ctx.spectra("center", &fe, &[0.0, 0.0]);
    let results = json!({
        "levels": summaries,
        "target_energy": target,
        "relative_error": last,
        "field_energy": u.dirichlet_energy(),
        "proxy": px,
    });
    Ok((results, Some(u)))
}

#[derive(Serialize)]
struct DegreeSummary {
    grid_step: f64,
    vertices: usize,
    degree: i64,
    total_area: f64,
    residual: f64,
    lipschitz: f64,
}

/// 0-homogeneous extension of a sphere datum into B³, relaxed and analyzed.
fn sphere_pipeline<D: SphereDatum>(
    ctx: &mut Ctx,
    datum: &D,
    expect_singular: bool,
) -> Result<(serde_json::Value, Option<QField>), CliError> {
    let cfg = ctx.cfg;
    let rho = cfg.analysis.mollify_radius;
    let mut degrees = Vec::new();
    for step in [rho / 2.0, rho / 4.0] {
        let grid = SphereGrid::resolving(step);
        let vertices = grid.vertices.len();
        let b = boundary_datum(datum, grid, rho).stage("boundary_datum")?;
        let r = degree(&b).stage("degree")?;
        degrees.push(DegreeSummary {
            grid_step: step,
            vertices,
            degree: r.degree,
            total_area: r.total_area,
            residual: r.residual,
            lipschitz: b.lipschitz,
        });
    }
    let deg = degrees[0].degree;
    ctx.check("degree_stable", degrees.iter().all(|d| d.degree == deg), format!("degree {deg}"));
    if expect_singular {
        ctx.check("degree_unit", deg.abs() == 1, format!("degree {deg}"));
    } else {
        ctx.check("degree_zero", deg == 0, format!("degree {deg}"));
    }

    let n = cfg.lattice.n;
    let domain = Arc::new(LatticeDomain::ball(3, cfg.h(), &[0.0; 3], 1.0, false).stage("lattice")?);
    let mut u = homogeneous_field(datum, domain, &[0.0; 3]).stage("construct")?;
    let rep = relax(&mut u, &solver_config(cfg)).stage("relax")?;
    let relax_sum = relax_summary(&u, n, &rep);
    ctx.check("solver_converged", rep.converged, format!("{} sweeps", rep.sweeps));

    let fe = FieldEnergy::new(&u);
    let px = proxy(ctx, &fe)?;
    if expect_singular {
        ctx.check("proxy_nonempty", px.size > 0, format!("{} flagged nodes", px.size));
        let bd = px.boundary_distance.unwrap_or(0.0);
        ctx.check("proxy_interior", px.size > 0 && bd > 0.1, format!("boundary distance {bd}"));
    } else {
        ctx.check("proxy_empty", px.size == 0, format!("{} flagged nodes", px.size));
    }
    let radii: Vec<f64> = cfg.analysis.minkowski_cells.iter().map(|c| c * cfg.h()).collect();
    let mink = minkowski_scale_matched(&fe, &ctx.kernel(), cfg.analysis.eps0, &radii).stage("minkowski")?;
    ctx.plots.minkowski.push(MinkowskiData::new("proxy", &mink));
    ctx.profile("center", &fe, &[0.0; 3]);
    ctx.spectra("center", &fe, &[0.0; 3]);

    let mut results = json!({
        "degree": degrees,
        "relax": relax_sum,
        "field_energy": u.dirichlet_energy(),
        "proxy": px,
        "minkowski_slope": finite(mink.slope),
    });
    if let TargetManifold::Euclidean(_) = u.target() {
        let s = subharmonicity_check(&u, &SquaredDistance(vec![0.0, 0.0]), 1e-9).stage("subharmonicity")?;
        results["subharmonicity"] = serde_json::to_value(s).expect("serializable");
    }
    Ok((results, Some(u)))
}

fn model_field(ctx: &Ctx) -> Result<QField, CliError> {
    let cfg = ctx.cfg;
    let h = cfg.h();
    let d = Arc::new(LatticeDomain::cube(3, h, &[-1.0; 3], &[1.0; 3], true).stage("lattice")?);
    let u = match cfg.analysis.strata.field {
        ModelField::Axial => QField::from_fn(d, TargetManifold::Euclidean(2), 2, |x| {
            let t = x[1].atan2(x[0]);
            vec![t.cos(), t.sin(), -t.cos(), -t.sin()]
        }),
        ModelField::Hedgehog => QField::from_fn(d, TargetManifold::Sphere(2), 1, |x| {
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            vec![x[0] / r, x[1] / r, x[2] / r]
        }),
        ModelField::Torus => {
            let datum = TorusDatum::new(curve(cfg)?, cfg.analysis.mollify_radius).stage("datum")?;
            homogeneous_field(&datum, d, &[0.0; 3])
        }
    }
    .stage("construct")?;
    Ok(u)
}

#[derive(Serialize)]
struct SymmetrySummary {
    center: Vec<f64>,
    radius: f64,
    pinch: f64,
    eigenvalues: Vec<f64>,
    best_plane_energy: Vec<f64>,
}

#[derive(Serialize)]
struct CoveringSummary {
    k: usize,
    leaves: usize,
    depth: usize,
    packing_sum: f64,
    good: usize,
    bad: usize,
    final_leaves: usize,
}

/// Symmetry reports, strata S^0 ⊂ S^1 ⊂ S^2, their tube volumes and a
/// covering of one stratum, on a model field over [-1, 1]³.
fn strata_sweep(ctx: &mut Ctx) -> Result<(serde_json::Value, Option<QField>), CliError> {
    let cfg = ctx.cfg;
    let st = &cfg.analysis.strata;
    let mut u = model_field(ctx)?;
    let mut relax_sum = None;
    if st.relax {
        let rep = relax(&mut u, &solver_config(cfg)).stage("relax")?;
        relax_sum = Some(relax_summary(&u, cfg.lattice.n, &rep));
    }
    let fe = FieldEnergy::new(&u);
    let kernel = ctx.kernel();
    let d = fe.domain();

    let mut reports = Vec::new();
    for c in &st.report_centers {
        let r = symmetry_report(&fe, &kernel, c, st.report_radius).stage("symmetry_report")?;
        reports.push(SymmetrySummary {
            center: r.center,
            radius: r.radius,
            pinch: r.pinch,
            eigenvalues: r.eigenvalues,
            best_plane_energy: r.best_plane_energy,
        });
    }

    let window = d.nodes_in_ball(&[0.0; 3], st.window_radius);
    let mut strata = Vec::new();
    for k in 0..3 {
        let p = StratumParams { k, eps: st.eps, r_min: st.r_min, s_max: st.s_max };
        strata.push(extract_stratum(&fe, &kernel, &p, &window).stage("extract_stratum")?.flagged);
    }
    let nested = strata.windows(2).all(|w| w[0].iter().all(|i| w[1].binary_search(i).is_ok()));
    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    ctx.check("strata_nested", nested, format!("sizes {sizes:?}"));
    for (k, s) in strata.iter().enumerate() {
        let t = minkowski_estimate(d, s, &st.minkowski_radii);
        ctx.plots.minkowski.push(MinkowskiData::new(&format!("S{k}"), &t));
    }

    let cp = CoveringParams {
        k: st.covering_k,
        rho: st.rho,
        delta: st.delta,
        r_floor: st.covering_floor,
        depth_cap: st.covering_depth_cap,
    };
    let cov = build_covering(&fe, &kernel, &[0.0; 3], st.covering_radius, &cp, &strata[st.covering_k]).stage("covering")?;
    let leaves = cov.root.leaves();
    let count = |l: CoverLabel| leaves.iter().filter(|n| n.label == l).count();
    let covering = CoveringSummary {
        k: st.covering_k,
        leaves: cov.leaves,
        depth: cov.root.depth(),
        packing_sum: cov.packing_sum,
        good: count(CoverLabel::Good),
        bad: count(CoverLabel::Bad),
        final_leaves: count(CoverLabel::Final),
    };
    ctx.profile("center", &fe, &[0.0; 3]);
    ctx.spectra("center", &fe, &[0.0; 3]);
    let results = json!({
        "field": st.field,
        "relax": relax_sum,
        "field_energy": u.dirichlet_energy(),
        "symmetry": reports,
        "window_nodes": window.len(),
        "strata_sizes": sizes,
        "covering": covering,
    });
    Ok((results, Some(u)))
}

/// Reifenberg verdict and rectifiability sums for a measure file.
fn reif_check(ctx: &mut Ctx, text: &str) -> Result<serde_json::Value, CliError> {
    let rc = &ctx.cfg.analysis.reif;
    let mu = DiscreteMeasure::read(text.as_bytes())
        .map_err(|e| CliError::Config { path: "analysis.reif.measure".into(), msg: e.to_string() })?;
    if rc.k > mu.m() {
        return Err(CliError::Config { path: "analysis.reif.k".into(), msg: format!("k exceeds ambient dimension {}", mu.m()) });
    }
    let sep = mu.min_separation();
    let radius = rc.ball_radius.unwrap_or(if sep.is_finite() { sep / 2.0 } else { 1.0 });
    let balls: Vec<(Vec<f64>, f64)> = mu.points().iter().map(|p| (p.clone(), radius)).collect();
    let v = reifenberg_verdict(&balls, rc.k, rc.delta_r).stage("reifenberg")?;
    let floor = default_floor(&mu);
    let rect = rectifiability_sum(&mu, rc.k, floor).stage("rectifiability")?;
    let beta_balls: Vec<(Vec<f64>, f64)> = mu.points().iter().map(|p| (p.clone(), 2.0 * radius)).collect();
    ctx.plots.beta_csv = Some(beta_profile_csv(&mu, &beta_balls, rc.k).stage("beta_profile")?);
    ctx.check("rectifiability_finite", rect.all_finite, format!("max {}", rect.max));
    Ok(json!({
        "atoms": mu.len(),
        "dimension": mu.m(),
        "total_mass": mu.total_mass(),
        "ball_radius": radius,
        "verdict": v,
        "rectifiability": {"max": rect.max, "mean": rect.mean, "all_finite": rect.all_finite},
    }))
}
