use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gpcouple::config::ExperimentKind;
use gpcouple::report::{to_json, Tolerances};
use gpcouple_cli::{compare_paths, error_json, exit_code_for, run_path, RunOptions, EXIT_OK, EXIT_THRESHOLD};

#[derive(Parser)]
#[command(name = "gpcouple", version, about = "Reproducible GP-surrogate coupling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Override experiment.master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for replications and Sobol rows (0 = all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Validate the config and exit without writing anything.
        #[arg(long)]
        dry_run: bool,
        /// Output directory (overrides the config and GPCOUPLE_OUTPUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Field-wise numeric comparison of two report.json files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        abs: f64,
        #[arg(long, default_value_t = 0.0)]
        rel: f64,
        /// Per-field absolute tolerance, `path-prefix=value`; repeatable.
        #[arg(long = "field", value_parser = parse_field)]
        fields: Vec<(String, f64)>,
    },
    /// List the available experiment kinds.
    ListExperiments,
}

fn parse_field(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected path-prefix=value")?;
    let v: f64 = v.parse().map_err(|_| format!("'{v}' is not a number"))?;
    Ok((k.to_string(), v))
}

fn fail(err: &gpcouple::Error) -> ExitCode {
    eprintln!("{}", error_json(err));
    ExitCode::from(exit_code_for(err) as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            jobs,
            dry_run,
            out,
        } => {
            let opts = RunOptions {
                seed,
                jobs,
                dry_run,
                output_dir: out,
            };
            match run_path(&config, &opts) {
                Ok(o) => {
                    if dry_run {
                        println!("config ok: {} (seed {})", o.config.experiment.kind.name(), o.config.experiment.master_seed);
                    } else {
                        for c in &o.checks {
                            println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
                        }
                        println!("wrote {}", o.output_dir.display());
                    }
                    ExitCode::from(o.exit_code as u8)
                }
                Err(e) => fail(&e),
            }
        }
        Command::Compare {
            a,
            b,
            abs,
            rel,
            fields,
        } => {
            let tol = Tolerances {
                abs,
                rel,
                fields: fields.into_iter().collect(),
                ..Default::default()
            };
            match compare_paths(&a, &b, &tol) {
                Ok(c) => {
                    print!("{}", to_json(&c).unwrap_or_default());
                    ExitCode::from(if c.passes() { EXIT_OK } else { EXIT_THRESHOLD } as u8)
                }
                Err(e) => fail(&e),
            }
        }
        Command::ListExperiments => {
            for k in ExperimentKind::ALL {
                println!("{:<10} {}", k.name(), k.describe());
            }
            ExitCode::SUCCESS
        }
    }
}
