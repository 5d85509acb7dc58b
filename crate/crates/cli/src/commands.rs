//! Subcommand bodies. Each returns the process exit status.

use std::path::Path;
use std::time::Instant;

use dnflow::check::CheckOutcome;

use crate::config::ExperimentConfig;
use crate::experiment::{execute, lemma_suite, Experiment};
use crate::export::{constants_csv, verify_run_dir, write_file, write_run, TIMING};

/// Exit status for usage and parse errors.
pub const EXIT_USAGE: i32 = 1;

fn print_check(c: &CheckOutcome) {
    println!(
        "{} {}: lhs={:e} rhs={:e} slack={:e} margin={:e}",
        if c.pass { "PASS" } else { "FAIL" },
        c.name,
        c.lhs,
        c.rhs,
        c.slack,
        c.margin
    );
}

/// `run <config>`: scheme, checks and export into `out`.
pub fn run(config_path: &Path, seed: Option<u64>, out: &Path, verbose: bool) -> i32 {
    let start = Instant::now();
    let mut config = match ExperimentConfig::parse_file(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", config_path.display());
            return EXIT_USAGE;
        }
    };
    if let Some(s) = seed {
        if let Err(e) = config.set("seed", &s.to_string()) {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    }
    let outcome = match Experiment::build(&config).and_then(|exp| execute(&exp)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let status = outcome.exit_code(config.boolean("allow_flagged"));
    let every_k = config.opt_int("output.every_k").unwrap_or(config.int("scheme.ell"));
    if let Err(e) = write_run(out, &config.canonical_echo(), &outcome, every_k, status) {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    let timing = format!(
        "{{\n  \"wall_clock_seconds\": {},\n  \"threads\": {}\n}}\n",
        start.elapsed().as_secs_f64(),
        rayon::current_num_threads()
    );
    if let Err(e) = write_file(out, TIMING, &timing) {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    for c in &outcome.checks {
        if verbose || !c.pass {
            print_check(c);
        }
    }
    let steps = &outcome.diagnostics.nonconverged_steps;
    if !steps.is_empty() {
        eprintln!("warning: {} step(s) did not converge: {steps:?}", steps.len());
    }
    println!(
        "{} checks, {} failed, status {status}",
        outcome.checks.len(),
        outcome.failed().len()
    );
    status
}

/// `verify <run-dir>`: re-hashes the inventory and reports the recorded
/// checks. Any mismatch gives status 4; otherwise the recorded status.
pub fn verify(dir: &Path) -> i32 {
    let (manifest, bad) = match verify_run_dir(dir) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    for name in &bad {
        println!("FAIL checksum {name}");
    }
    for c in manifest.checks.iter().filter(|c| !c.pass) {
        println!("FAIL {}", c.name);
    }
    println!(
        "{} files, {} mismatched; {} checks, {} failed; recorded status {}",
        manifest.files.len(),
        bad.len(),
        manifest.checks.len(),
        manifest.checks.iter().filter(|c| !c.pass).count(),
        manifest.exit_status
    );
    if bad.is_empty() {
        manifest.exit_status
    } else {
        4
    }
}

/// `lemmas`: derive and re-check every algebraic constant for each `q` and
/// component count.
pub fn lemmas(qs: &[f64], components: &[usize], samples: usize, seed: u64, out: Option<&Path>) -> i32 {
    let mut all_constants = Vec::new();
    let mut failed = 0;
    for &q in qs {
        for &nc in components {
            match lemma_suite(q, nc, samples, seed) {
                Ok((constants, checks)) => {
                    for c in &checks {
                        print_check(c);
                        failed += usize::from(!c.pass);
                    }
                    all_constants.extend(constants);
                }
                Err(e) => {
                    eprintln!("error: q = {q}, N = {nc}: {e}");
                    return EXIT_USAGE;
                }
            }
        }
    }
    if let Some(dir) = out {
        if let Err(e) = std::fs::create_dir_all(dir)
            .map_err(|e| e.to_string())
            .and_then(|_| write_file(dir, "constants.csv", &constants_csv(&all_constants)).map_err(|e| e.to_string()))
        {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    }
    println!("{} constants, {failed} failed", all_constants.len());
    if failed == 0 {
        0
    } else {
        4
    }
}
