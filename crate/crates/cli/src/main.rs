use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fksmc_core::lab::Status;

mod config;
mod dispatch;

#[derive(Parser)]
#[command(name = "fksmc", version, about = "Stability experiments for tempered Feynman-Kac particle samplers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; overrides `workers` in the config.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Parse and validate a config, printing the resolved form and any warnings.
    Validate { config: PathBuf },
}

fn load(path: &PathBuf) -> Result<config::Validated, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    config::parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn report_warnings(v: &config::Validated) {
    for w in &v.warnings {
        eprintln!("warning: {w}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match load(&config) {
            Ok(v) => {
                report_warnings(&v);
                let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v.config).expect("config serializes"));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Run { config, out, workers } => {
            let mut v = match load(&config) {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            if workers == Some(0) {
                eprintln!("error: --workers must be >= 1");
                return ExitCode::from(1);
            }
            if let Some(dir) = out {
                v.config.output_dir = dir;
            }
            if workers.is_some() {
                v.config.workers = workers;
            }
            report_warnings(&v);
            let threads = v.config.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: worker pool: {e}");
                    return ExitCode::from(1);
                }
            };
            let outputs = match pool.install(|| dispatch::execute(&v)) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            if let Err(e) = dispatch::write_outputs(&v.config.output_dir, &v, &outputs) {
                eprintln!("error: writing {}: {e}", v.config.output_dir.display());
                return ExitCode::from(1);
            }
            println!("{:?}: {}", outputs.status, v.config.output_dir.display());
            match outputs.status {
                Status::Inconclusive => ExitCode::from(2),
                Status::Success | Status::Violated => ExitCode::SUCCESS,
            }
        }
    }
}
