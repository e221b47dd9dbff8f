use std::path::PathBuf;
use std::process::ExitCode;

use averaging_cli::{load, run, RunError, RunOptions, OUT_DIR_VAR};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "averaging", version, about = "Averaging experiments: simulation and truncated forward equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSV tables and summary.json.
    Run {
        config: PathBuf,
        /// Output directory [default: config `output.dir`, else out/<experiment>]
        #[arg(long, env = OUT_DIR_VAR)]
        out: Option<PathBuf>,
        /// Override `seeds.base`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Re-run and compare against the files already in the output directory.
        #[arg(long)]
        verify: bool,
    },
    /// Check a configuration and list every violation.
    Validate { config: PathBuf },
}

fn fail(e: &RunError) -> ExitCode {
    eprintln!("{e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Validate { config } => {
            let loaded = match load(&config) {
                Ok(l) => l,
                Err(e) => return fail(&e),
            };
            let violations = loaded.config.validate();
            for v in &violations {
                println!("{v}");
            }
            if violations.iter().any(|v| !v.warning) {
                ExitCode::from(2)
            } else {
                println!("ok: {} (sha256 {})", config.display(), loaded.sha256);
                ExitCode::SUCCESS
            }
        }
        Command::Run {
            config,
            out,
            seed,
            threads,
            verify,
        } => {
            if let Some(t) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
                    eprintln!("cannot configure {t} threads: {e}");
                    return ExitCode::from(2);
                }
            }
            let loaded = match load(&config) {
                Ok(l) => l,
                Err(e) => return fail(&e),
            };
            let opts = RunOptions {
                out_dir: out,
                seed,
                verify,
            };
            match run(&loaded, &opts) {
                Ok(report) => {
                    let s = &report.summary;
                    for w in &s.warnings {
                        eprintln!("{w}");
                    }
                    for c in &s.checks {
                        println!("[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
                    }
                    let verb = if verify { "verified" } else { "wrote" };
                    println!(
                        "{} {}: {verb} {} files in {} ({:.2} s)",
                        s.experiment,
                        if s.pass { "passed" } else { "FAILED" },
                        s.files.len(),
                        report.out_dir.display(),
                        s.wall_time_s
                    );
                    ExitCode::from(report.exit_code() as u8)
                }
                Err(e) => fail(&e),
            }
        }
    }
}
