use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dnflow_cli::commands;

#[derive(Debug, Parser)]
#[command(name = "dnflow", version, about = "Minimizing-movement runs with a posteriori certification")]
struct Cli {
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the scheme and every enabled check for a configuration file.
    Run {
        config: PathBuf,
        /// Print passing checks as well.
        #[arg(long, short)]
        verbose: bool,
    },
    /// Re-hash the outputs of a run directory against its manifest.
    Verify { run_dir: PathBuf },
    /// Derive and re-check the algebraic inequality constants.
    Lemmas {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.3, 0.5, 1.0, 2.0, 5.0])]
        q: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 3])]
        components: Vec<usize>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_USAGE as u8 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(commands::EXIT_USAGE as u8);
        }
    }
    let status = match &cli.command {
        Command::Run { config, verbose } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            commands::run(config, cli.seed, &out, *verbose)
        }
        Command::Verify { run_dir } => commands::verify(run_dir),
        Command::Lemmas { q, components, samples } => {
            commands::lemmas(q, components, *samples, cli.seed.unwrap_or(0), cli.out.as_deref())
        }
    };
    ExitCode::from(status as u8)
}
