use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use isr_cli::{presets, run_compare, run_sweep, CliError, SweepConfig};

#[derive(Parser)]
#[command(name = "isr", version, about = "Implied Sharpe ratio sweeps and oracle comparisons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write one CSV row per point.
    Run {
        config: PathBuf,
        /// Output file; defaults to `output.path` or stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write JSON instead of CSV.
        #[arg(long)]
        json: bool,
        #[arg(long)]
        verbose: bool,
    },
    /// Compare the series with the enabled oracles; writes a JSON report.
    Compare {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        verbose: bool,
    },
    /// Print the preset sweeps as configuration files.
    Presets {
        /// Only this preset.
        name: Option<String>,
        /// Write each preset to `<dir>/<name>.toml` instead of stdout.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn sink(out: Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            json,
            verbose,
        } => {
            let cfg = SweepConfig::load(&config)?;
            let output = run_sweep(&cfg)?;
            let mut w = sink(out.or_else(|| cfg.output.path.clone()))?;
            if json || cfg.output.json {
                output.write_json(&mut w)?;
            } else {
                output.write_csv(&mut w)?;
            }
            w.flush().map_err(|e| CliError::Io(e.to_string()))?;
            let failed = output.failures();
            if verbose || failed > 0 {
                eprintln!("{} points, {failed} failed", output.rows.len());
                for r in output.rows.iter().filter(|r| r.error.is_some()) {
                    eprintln!("  {}={}: {}", output.axis, r.axis_value, r.error.as_deref().unwrap_or(""));
                }
            }
            Ok(failed == 0)
        }
        Command::Compare { config, out, verbose } => {
            let cfg = SweepConfig::load(&config)?;
            let report = run_compare(&cfg)?;
            let mut w = sink(out)?;
            serde_json::to_writer_pretty(&mut w, &report).map_err(|e| CliError::Io(e.to_string()))?;
            writeln!(w).map_err(|e| CliError::Io(e.to_string()))?;
            w.flush().map_err(|e| CliError::Io(e.to_string()))?;
            let failed = report.failures();
            if verbose || failed > 0 {
                for s in &report.scenarios {
                    for f in &s.failures {
                        eprintln!("scenario {}: {f}", s.index);
                    }
                }
            }
            Ok(failed == 0)
        }
        Command::Presets { name, dir } => {
            let configs = match &name {
                Some(n) => vec![presets::preset(n).ok_or_else(|| {
                    CliError::Config(format!("unknown preset `{n}`; known: {}", presets::NAMES.join(", ")))
                })?],
                None => presets::all(),
            };
            for cfg in configs {
                let text = cfg.to_toml()?;
                let label = cfg.name.clone().unwrap_or_default();
                match &dir {
                    Some(d) => {
                        let path = d.join(format!("{label}.toml"));
                        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                    }
                    None => println!("# {label}\n{text}"),
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
