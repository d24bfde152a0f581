use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use korn_shell_cli::commands::run_file;
use korn_shell_cli::{exit_code, Command, Diagnostic, RunOptions};

#[derive(Parser, Debug)]
#[command(name = "kornshell", version, about = "Korn-constant sweeps, localized trial fields and buckling quotients for thin shells")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides OUTPUT_DIR and the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for independent sweep entries.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Overrides `solver.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Surface hypothesis checks and the pointwise Codazzi-Gauss residual.
    VerifySurface,
    /// Korn and Korn-Poincare quotients at one thickness.
    SolveQuotient {
        /// Thickness; defaults to the first of `sweep.h`.
        #[arg(long)]
        h: Option<f64>,
    },
    /// Quotients across `sweep.h` with log-log fits.
    Sweep,
    /// Norm scaling table of the localized trial field.
    AnsatzEval,
    /// Mass ratios of the Korn minimizer around the flat point.
    Localization,
    /// Linearized buckling quotient and validity ratio across `sweep.h`.
    Buckling,
    /// Integral identity audit on random trial fields.
    AuditIdentities,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = match cli.command {
        Cmd::VerifySurface => Command::VerifySurface,
        Cmd::SolveQuotient { h } => Command::SolveQuotient { h },
        Cmd::Sweep => Command::Sweep,
        Cmd::AnsatzEval => Command::AnsatzEval,
        Cmd::Localization => Command::Localization,
        Cmd::Buckling => Command::Buckling,
        Cmd::AuditIdentities => Command::AuditIdentities,
    };
    let opts = RunOptions { out: cli.out, workers: cli.workers, seed: cli.seed };
    let Some(config) = cli.config else {
        return fail(&korn_shell_cli::CliError::Config("--config is required".into()));
    };
    match run_file(&cmd, &config, &opts) {
        Ok(o) => {
            println!("{}", o.summary);
            for f in &o.files {
                println!("wrote {}", f.display());
            }
            if o.ok {
                ExitCode::SUCCESS
            } else {
                let d = Diagnostic {
                    status: "error",
                    exit_code: 2,
                    kind: "check-failed".into(),
                    message: "a checked hypothesis did not hold; see the written report".into(),
                };
                eprintln!("{}", serde_json::to_string(&d).unwrap_or_default());
                ExitCode::from(2)
            }
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &korn_shell_cli::CliError) -> ExitCode {
    let d = Diagnostic::from_error(e);
    eprintln!("{}", serde_json::to_string(&d).unwrap_or_default());
    ExitCode::from(exit_code(e) as u8)
}
