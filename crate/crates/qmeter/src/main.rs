use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use qmeter::report::ReportFormat;
use qmeter::runner::{run_experiment, RunOptions};

#[derive(Parser)]
#[command(name = "qmeter", about = "Continuous quantum measurement toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        /// Experiment description (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for artifacts; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Console report format.
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Worker thread count; affects wall time only.
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            format,
            threads,
        } => {
            let opts = RunOptions {
                out_dir: out,
                threads,
            };
            match run_experiment(&config, &opts) {
                Ok(report) => {
                    let rendered = report.render(match format {
                        Format::Json => ReportFormat::Json,
                        Format::Text => ReportFormat::Text,
                    });
                    print!("{rendered}");
                    if report.pass {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
