use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coldscatter::cli::{apply_overrides, emit_results, parse_config, run_scenario, Overrides};
use coldscatter::Error;

/// Multiple scattering, coherent backscattering and Raman gain in cold atomic clouds.
#[derive(Parser)]
#[command(version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write CSV/JSON results.
    Run {
        config: PathBuf,
        /// Overrides `mc.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `mc.workers`; results do not depend on it.
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory; takes precedence over COLDSCATTER_OUT_DIR and `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario file and print its canonical form.
    Validate { config: PathBuf },
}

const OUT_ENV: &str = "COLDSCATTER_OUT_DIR";

fn report(e: &Error) -> ExitCode {
    match e {
        Error::Config(issues) => {
            eprintln!("error: invalid configuration ({} problem{})", issues.len(), if issues.len() == 1 { "" } else { "s" });
            for i in issues {
                eprintln!("  {i}");
            }
        }
        other => eprintln!("error: {other}"),
    }
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match args.command {
        Command::Validate { config } => match parse_config(&config) {
            Ok(cfg) => {
                print!("{}", cfg.canonical_toml());
                eprintln!("ok: {} (hash {})", cfg.scenario.name(), cfg.hash());
                ExitCode::SUCCESS
            }
            Err(e) => report(&e),
        },
        Command::Run { config, seed, workers, out } => {
            let mut cfg = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => return report(&e),
            };
            apply_overrides(&mut cfg, Overrides { seed, workers });
            let env_dir = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
            let dir = out.or(env_dir).or_else(|| cfg.output_dir()).unwrap_or_else(|| PathBuf::from("results"));
            let formats = cfg.output.as_ref().map(|o| o.formats.clone()).unwrap_or_default();

            let outcome = run_scenario(&cfg, &mut |msg| eprintln!("{msg}"));
            let written = match emit_results(&outcome.record, &dir, &formats) {
                Ok(w) => w,
                Err(e) => return report(&e),
            };
            for path in &written {
                eprintln!("wrote {}", path.display());
            }
            for (k, v) in &outcome.record.summary {
                println!("{k} = {v}");
            }
            match outcome.error {
                Some(e) => {
                    eprintln!("run stopped early; partial results were kept");
                    report(&e)
                }
                None => ExitCode::SUCCESS,
            }
        }
    }
}
