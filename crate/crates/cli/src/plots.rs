//! CSV plot data derived from a report.

use std::fmt::Write as _;
use std::path::Path;

use crate::report::Report;
use crate::{write_file, CliError};

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write θ profiles, spectra and Minkowski tables into `dir`. Returns the
/// file names written, in order.
pub fn emit_plots(report: &Report, dir: &Path) -> Result<Vec<String>, CliError> {
    let mut files: Vec<(String, String)> = Vec::new();
    let p = &report.plots;

    for prof in &p.profiles {
        let mut s = String::new();
        for a in 0..prof.center.len() {
            write!(s, "x{},", a + 1).unwrap();
        }
        s.push_str("r,theta,pinch,P\n");
        for k in 0..prof.radii.len() {
            for v in &prof.center {
                write!(s, "{v},").unwrap();
            }
            writeln!(s, "{},{},{},{}", prof.radii[k], cell(prof.theta[k]), cell(prof.pinch[k]), cell(prof.p[k])).unwrap();
        }
        files.push((format!("profile_{}.csv", prof.label), s));
    }

    if !p.spectra.is_empty() {
        let m = p.spectra.iter().map(|s| s.eigenvalues.len()).max().unwrap_or(0);
        let mut s = String::from("label,radius");
        for a in 0..m {
            write!(s, ",lambda{}", a + 1).unwrap();
        }
        s.push('\n');
        for sp in &p.spectra {
            write!(s, "{},{}", sp.label, sp.radius).unwrap();
            for v in &sp.eigenvalues {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        files.push(("spectra.csv".into(), s));
    }

    if !p.minkowski.is_empty() {
        let mut slopes = String::from("label,slope\n");
        for t in &p.minkowski {
            let mut s = String::from("radius,volume\n");
            for (r, v) in t.radii.iter().zip(&t.volumes) {
                writeln!(s, "{r},{v}").unwrap();
            }
            files.push((format!("minkowski_{}.csv", t.label), s));
            writeln!(slopes, "{},{}", t.label, cell(t.slope)).unwrap();
        }
        files.push(("minkowski_slopes.csv".into(), slopes));
    }

    if let Some(b) = &p.beta_csv {
        files.push(("beta_profile.csv".into(), b.clone()));
    }

    for (name, body) in &files {
        write_file(&dir.join(name), body.as_bytes())?;
    }
    Ok(files.into_iter().map(|(n, _)| n).collect())
}

/// Re-emit plot data for a stored run into a fresh `plots-NNNN` subdirectory.
pub fn replot(run_dir: &Path) -> Result<(std::path::PathBuf, Vec<String>), CliError> {
    let path = run_dir.join("report.json");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let report = Report::from_json(&text).map_err(|e| CliError::Config { path: path.display().to_string(), msg: e.to_string() })?;
    let dir = crate::fresh_dir(run_dir, "plots")?;
    let files = emit_plots(&report, &dir)?;
    Ok((dir, files))
}
