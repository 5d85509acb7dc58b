//! Deterministic file output: field slices, ledger, constants, report and
//! manifest.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use dnflow::algebra::LemmaConstant;
use dnflow::check::CheckOutcome;
use dnflow::grid::{Field, Trajectory};

use crate::experiment::{Diagnostics, Outcome, RunError};

pub const MANIFEST: &str = "manifest.json";
pub const TIMING: &str = "timing.json";

fn io(path: &Path, e: std::io::Error) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

/// Writes `contents` to `dir/name` and returns `name`.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<String, RunError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| io(&path, e))?;
    Ok(name.to_string())
}

/// Legacy-ASCII VTK structured points.
pub fn field_to_vtk(field: &Field, title: &str) -> String {
    let l = field.lattice();
    let nc = field.components();
    let mut s = String::from("# vtk DataFile Version 3.0\n");
    s.push_str(title);
    s.push_str("\nASCII\nDATASET STRUCTURED_POINTS\n");
    s.push_str(&format!("DIMENSIONS {} {} 1\n", l.dims[0], l.dims[1]));
    s.push_str(&format!("ORIGIN {:e} {:e} 0\n", l.origin[0], l.origin[1]));
    s.push_str(&format!("SPACING {:e} {:e} 1\n", l.spacing[0], l.spacing[1]));
    s.push_str(&format!("POINT_DATA {}\n", l.len()));
    if nc <= 4 {
        s.push_str(&format!("SCALARS u double {nc}\nLOOKUP_TABLE default\n"));
    } else {
        s.push_str(&format!("FIELD FieldData 1\nu {nc} {} double\n", l.len()));
    }
    for k in 0..l.len() {
        let row: Vec<String> = field.at(k).iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Indices `0, k, 2k, ...` plus `ℓ`.
pub fn exported_indices(ell: usize, every_k: usize) -> Vec<usize> {
    let k = every_k.max(1);
    let mut idx: Vec<usize> = (0..=ell).step_by(k).collect();
    if idx.last() != Some(&ell) {
        idx.push(ell);
    }
    idx
}

/// `slice_<i>.csv` and `slice_<i>.vtk` for every exported step.
pub fn export_fields(traj: &Trajectory, dir: &Path, every_k: usize) -> Result<Vec<String>, RunError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut files = Vec::new();
    for i in exported_indices(traj.ell(), every_k) {
        let f = &traj.steps[i];
        files.push(write_file(dir, &format!("slice_{i}.csv"), &f.to_csv_string())?);
        files.push(write_file(dir, &format!("slice_{i}.vtk"), &field_to_vtk(f, &format!("slice {i} t={:e}", traj.time(i))))?);
    }
    Ok(files)
}

pub fn constants_csv(constants: &[LemmaConstant]) -> String {
    let mut s = String::from("lemma_id,q,c_hat,samples,seed\n");
    for c in constants {
        s.push_str(&format!("{},{:e},{:e},{},{}\n", c.lemma.name(), c.param, c.c_hat, c.samples, c.seed));
    }
    s
}

pub fn error_series_csv(series: &[(f64, f64, f64)]) -> String {
    let mut s = String::from("t,error_lq1,relative_error\n");
    for (t, e, r) in series {
        s.push_str(&format!("{t:e},{e:e},{r:e}\n"));
    }
    s
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    all_passed: bool,
    exit_status: i32,
    checks: &'a [CheckOutcome],
    diagnostics: &'a Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CheckStatus {
    pub name: String,
    pub pass: bool,
}

/// Run summary. Wall-clock timing lives in a separate file so that the
/// manifest depends only on the configuration and seed.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub config: Vec<String>,
    pub versions: Vec<(String, String)>,
    pub exit_status: i32,
    pub checks: Vec<CheckStatus>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> Result<(u64, String), RunError> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    let digest = Sha256::digest(&bytes);
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok((bytes.len() as u64, hex))
}

/// Writes every output of a finished run and the manifest listing them.
pub fn write_run(dir: &Path, echo: &str, outcome: &Outcome, every_k: usize, exit_status: i32) -> Result<RunManifest, RunError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut files = vec![write_file(dir, "config.txt", echo)?];
    files.push(write_file(dir, "ledger.csv", &outcome.run.ledger.to_csv_string())?);
    files.push(write_file(dir, "constants.csv", &constants_csv(&outcome.constants))?);
    if !outcome.diagnostics.error_series.is_empty() {
        files.push(write_file(dir, "errors.csv", &error_series_csv(&outcome.diagnostics.error_series))?);
    }
    let report = Report {
        all_passed: outcome.all_passed(),
        exit_status,
        checks: &outcome.checks,
        diagnostics: &outcome.diagnostics,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| RunError::Setup(e.to_string()))?;
    files.push(write_file(dir, "report.json", &json)?);
    files.extend(export_fields(&outcome.run.trajectory, dir, every_k)?);
    finish_manifest(dir, echo, outcome.checks.iter().map(|c| (c.name.clone(), c.pass)), files, exit_status)
}

pub fn finish_manifest(
    dir: &Path,
    echo: &str,
    checks: impl Iterator<Item = (String, bool)>,
    files: Vec<String>,
    exit_status: i32,
) -> Result<RunManifest, RunError> {
    let mut entries = Vec::with_capacity(files.len());
    for name in files {
        let (bytes, sha256) = sha256_file(&dir.join(&name))?;
        entries.push(FileEntry { name, bytes, sha256 });
    }
    let manifest = RunManifest {
        config: echo.lines().map(str::to_string).collect(),
        versions: vec![
            ("dnflow".into(), dnflow::VERSION.into()),
            ("dnflow-cli".into(), env!("CARGO_PKG_VERSION").into()),
        ],
        exit_status,
        checks: checks.map(|(name, pass)| CheckStatus { name, pass }).collect(),
        files: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| RunError::Setup(e.to_string()))?;
    write_file(dir, MANIFEST, &json)?;
    Ok(manifest)
}

/// Re-hashes every file listed in the manifest; returns the mismatches.
pub fn verify_run_dir(dir: &Path) -> Result<(RunManifest, Vec<String>), RunError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| RunError::Setup(format!("{}: {e}", path.display())))?;
    let mut bad = Vec::new();
    for f in &manifest.files {
        match sha256_file(&dir.join(&f.name)) {
            Ok((bytes, sha)) if bytes == f.bytes && sha == f.sha256 => {}
            _ => bad.push(f.name.clone()),
        }
    }
    Ok((manifest, bad))
}
