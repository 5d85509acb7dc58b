use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dnflow::geometry::Lattice;
use dnflow::grid::Field;
use dnflow_cli::config::ExperimentConfig;
use dnflow_cli::experiment::{execute, Experiment};
use dnflow_cli::export::{export_fields, verify_run_dir};

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn dnflow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dnflow")).args(args).current_dir(dir).output().unwrap()
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> String {
    fs::write(dir.join(name), body).unwrap();
    name.to_string()
}

const SMALL: &str = "scheme.ell = 4\nscheme.T = 0.02\ngrid.cells = 12\nexact.kind = heat\ninitial.kind = exact\n\
verify.competitors = 5\nverify.lemma_samples = 2000\nverify.self_check_samples = 200\n";

#[test]
fn minimal_heat_echo_matches_golden_file() {
    let c = ExperimentConfig::parse_file(&golden("heat_minimal.cfg")).unwrap();
    let expected = fs::read_to_string(golden("heat_minimal.echo")).unwrap();
    assert_eq!(c.canonical_echo(), expected);
}

#[test]
fn exported_csv_reloads_bit_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let c = ExperimentConfig::parse_str(SMALL, tmp.path()).unwrap();
    let exp = Experiment::build(&c).unwrap();
    let run = exp.run_scheme().unwrap();
    let files = export_fields(&run.trajectory, tmp.path(), 1).unwrap();
    assert_eq!(files.len(), 2 * 5);
    for i in 0..=4 {
        let text = fs::read_to_string(tmp.path().join(format!("slice_{i}.csv"))).unwrap();
        let f = Field::from_csv_str(&text, exp.lattice).unwrap();
        let bits = |f: &Field| f.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&f), bits(&run.trajectory.steps[i]));
    }
    let sub = tmp.path().join("every_ell");
    assert_eq!(export_fields(&run.trajectory, &sub, 4).unwrap(), ["slice_0.csv", "slice_0.vtk", "slice_4.csv", "slice_4.vtk"]);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let l = Lattice::unit(1, 3).unwrap();
    let traj_cfg = ExperimentConfig::parse_str("scheme.ell = 1\ngrid.dim = 1\ngrid.cells = 2\n", tmp.path()).unwrap();
    let run = Experiment::build(&traj_cfg).unwrap().run_scheme().unwrap();
    assert_eq!(run.trajectory.lattice(), &l);
    let err = export_fields(&run.trajectory, &blocker.join("sub"), 1).unwrap_err();
    assert!(err.to_string().starts_with("i/o error"), "{err}");
}

#[test]
fn run_writes_a_complete_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "small.cfg", SMALL);
    let out = dnflow(&["run", &cfg, "--out", "o", "--seed", "3"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let (manifest, bad) = verify_run_dir(&tmp.path().join("o")).unwrap();
    assert!(bad.is_empty());
    assert!(manifest.config.contains(&"seed = 3".to_string()));
    let names: Vec<&str> = manifest.files.iter().map(|f| f.name.as_str()).collect();
    for n in ["config.txt", "ledger.csv", "constants.csv", "errors.csv", "report.json", "slice_0.csv", "slice_4.vtk"] {
        assert!(names.contains(&n), "{n} missing from {names:?}");
    }
    let mut listed: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    listed.extend(["manifest.json".into(), "timing.json".into()]);
    listed.sort();
    let mut on_disk: Vec<String> = fs::read_dir(tmp.path().join("o"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    on_disk.sort();
    assert_eq!(listed, on_disk);
    let ledger = fs::read_to_string(tmp.path().join("o/ledger.csv")).unwrap();
    assert!(ledger.starts_with("i,t,energy_f,lq1_mass,dissipation,step_margin,converged\n"));
    assert_eq!(ledger.lines().count(), 6);
    let constants = fs::read_to_string(tmp.path().join("o/constants.csv")).unwrap();
    assert!(constants.starts_with("lemma_id,q,c_hat,samples,seed\n"));
    assert_eq!(dnflow(&["verify", "o"], tmp.path()).status.code(), Some(0));
}

#[test]
fn rerun_with_same_seed_reproduces_checksums() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "small.cfg", SMALL);
    for d in ["a", "b"] {
        assert_eq!(dnflow(&["run", &cfg, "--out", d], tmp.path()).status.code(), Some(0));
    }
    let a = fs::read(tmp.path().join("a/manifest.json")).unwrap();
    let b = fs::read(tmp.path().join("b/manifest.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = write_cfg(tmp.path(), "empty.cfg", "");
    let out = dnflow(&["run", &empty, "--out", "e"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing scheme.ell"));

    let dup = write_cfg(tmp.path(), "dup.cfg", "scheme.ell = 2\nseed = 1\nseed = 2\n");
    let out = dnflow(&["run", &dup, "--out", "d"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lines 2 and 3"));

    let flagged = format!("{SMALL}solver.max_iters = 1\n");
    let cfg = write_cfg(tmp.path(), "flagged.cfg", &flagged);
    assert_eq!(dnflow(&["run", &cfg, "--out", "f"], tmp.path()).status.code(), Some(3));
    let allowed = write_cfg(tmp.path(), "allowed.cfg", &format!("{flagged}allow_flagged = true\n"));
    let code = dnflow(&["run", &allowed, "--out", "g"], tmp.path()).status.code();
    assert!(matches!(code, Some(0) | Some(4)), "{code:?}");

    let failing = write_cfg(tmp.path(), "tight.cfg", &format!("{SMALL}verify.max_relative_error = 1e-9\n"));
    assert_eq!(dnflow(&["run", &failing, "--out", "t"], tmp.path()).status.code(), Some(4));

    assert_eq!(dnflow(&["frobnicate"], tmp.path()).status.code(), Some(1));
}

#[test]
fn csv_domain_family_and_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let l = Lattice::unit(2, 9).unwrap();
    let fam = dnflow::geometry::DomainFamily::expanding_ball(l, [0.5, 0.5], |t| 0.2 + t, vec![0.0, 0.05, 0.1], 0.1).unwrap();
    fs::write(tmp.path().join("family.csv"), fam.to_csv_string()).unwrap();
    fs::write(tmp.path().join("u_o.csv"), Field::constant(l, &[0.5]).to_csv_string()).unwrap();
    let body = "scheme.ell = 2\nscheme.T = 0.1\ngrid.cells = 8\ndomain.kind = csv\ndomain.csv = family.csv\n\
initial.kind = csv\ninitial.csv = u_o.csv\nverify.competitors = 3\nverify.lemma_samples = 500\nverify.self_check_samples = 100\n\
verify.parabolic = false\nverify.initial = false\n";
    let c = ExperimentConfig::parse_str(body, tmp.path()).unwrap();
    let exp = Experiment::build(&c).unwrap();
    assert_eq!(exp.family, fam);
    let out = execute(&exp).unwrap();
    assert!(out.all_passed(), "{:?}", out.failed());
}

#[test]
fn lemmas_subcommand_writes_constants() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dnflow(&["lemmas", "--q", "1,2", "--components", "1", "--samples", "2000", "--out", "c"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = fs::read_to_string(tmp.path().join("c/constants.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("boundary_lower,1e0,2e0,2000,")), "{csv}");
}
