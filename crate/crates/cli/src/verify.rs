//! Re-check stored snapshots against their report.

use std::fs;
use std::path::Path;

use qharm::betareif::{reifenberg_verdict, DiscreteMeasure};
use qharm::lattice::{FieldEnergy, Snapshot};
use qharm::monotone::Kernel;
use qharm::strata::singular_proxy;
use qharm::NodeKind;

use crate::report::{Check, Report};
use crate::{CliError, StageExt};

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn snapshot(path: &Path) -> Result<Snapshot, CliError> {
    let text = read(path)?;
    Snapshot::read(text.as_bytes()).stage("snapshot")
}

pub fn verify_run(dir: &Path) -> Result<Vec<Check>, CliError> {
    let rpath = dir.join("report.json");
    let report = Report::from_json(&read(&rpath)?)
        .map_err(|e| CliError::Config { path: rpath.display().to_string(), msg: e.to_string() })?;
    let res = &report.results;
    let mut checks = Vec::new();

    let fpath = dir.join("field.qf");
    if fpath.exists() {
        let u = snapshot(&fpath)?.into_field().stage("snapshot")?;
        let e = u.dirichlet_energy();
        if let Some(stored) = res["field_energy"].as_f64() {
            let rel = (e - stored).abs() / stored.abs().max(1e-300);
            checks.push(Check::new("snapshot_energy", rel <= 1e-12, format!("recomputed {e}, stored {stored}")));
        }
        let d = u.domain();
        let n = u.n();
        let t = u.target();
        let off = d.active_nodes().filter(|&i| u.value(i).chunks(n).any(|p| !t.contains(p, 1e-9))).count();
        checks.push(Check::new("values_on_target", off == 0, format!("{off} nodes off the target")));

        let bpath = dir.join("boundary.qf");
        if bpath.exists() {
            let b = snapshot(&bpath)?;
            let expected = d.boundary_nodes().len();
            let mismatched = b
                .records
                .iter()
                .filter(|(i, k, v)| *k != NodeKind::Boundary || *i >= d.len() || u.value(*i) != v.as_slice())
                .count();
            checks.push(Check::new(
                "boundary_matches",
                mismatched == 0 && b.records.len() == expected,
                format!("{} records, {expected} boundary nodes, {mismatched} mismatched", b.records.len()),
            ));
        }

        if let (Some(eps0), Some(r_min), Some(size)) =
            (res["proxy"]["eps0"].as_f64(), res["proxy"]["r_min"].as_f64(), res["proxy"]["size"].as_u64())
        {
            let kernel = Kernel::by_name(&report.config.analysis.kernel).stage("kernel")?;
            let fe = FieldEnergy::new(&u);
            let got = singular_proxy(&fe, &kernel, eps0, r_min).stage("singular_proxy")?.len();
            checks.push(Check::new("proxy_reproduced", got as u64 == size, format!("recomputed {got}, stored {size}")));
        }
    }

    let mpath = dir.join("measure.txt");
    if mpath.exists() {
        let mu = DiscreteMeasure::read(read(&mpath)?.as_bytes()).stage("measure")?;
        let r = res["ball_radius"].as_f64().unwrap_or(1.0);
        let rc = &report.config.analysis.reif;
        let balls: Vec<(Vec<f64>, f64)> = mu.points().iter().map(|p| (p.clone(), r)).collect();
        let v = reifenberg_verdict(&balls, rc.k, rc.delta_r).stage("reifenberg")?;
        let stored = serde_json::to_value(&v).expect("serializable");
        checks.push(Check::new("verdict_reproduced", stored == res["verdict"], format!("packing sum {}", v.packing_sum)));
    }

    if checks.is_empty() {
        checks.push(Check::new("artifacts_present", false, "no snapshot or measure in run directory"));
    }
    Ok(checks)
}
