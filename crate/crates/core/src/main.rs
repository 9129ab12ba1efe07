use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use perfrec::cli::{execute, exit_code, Command, Options};

#[derive(Parser)]
#[command(
    name = "perfrec",
    version,
    about = "Retraining dynamics of recommenders with strategic content creators"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Overlap, dispersion or cost-time sweep.
    Synth(Common),
    /// Method comparison over retraining rounds.
    Dynamics(Common),
    /// Strategic trajectories over a lambda grid.
    Pareto(Common),
    /// Proposition verifiers and numerical checks.
    Verify(Common),
    /// Render a result CSV as SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = |cmd, c: Common| {
        (
            cmd,
            Options {
                config: c.config,
                input: None,
                out: c.out,
                seed: c.seed,
                jobs: c.jobs,
            },
        )
    };
    let (cmd, opts) = match cli.command {
        Cmd::Synth(c) => common(Command::Synth, c),
        Cmd::Dynamics(c) => common(Command::Dynamics, c),
        Cmd::Pareto(c) => common(Command::Pareto, c),
        Cmd::Verify(c) => common(Command::Verify, c),
        Cmd::Plot { input, out } => (
            Command::Plot,
            Options {
                input: Some(input),
                out,
                ..Options::default()
            },
        ),
    };
    let result = execute(cmd, &opts);
    match &result {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
