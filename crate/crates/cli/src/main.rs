use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isp_cli::config::RunConfig;
use isp_cli::{demos, evaluate, trainer, verify_cmd, CliError};

#[derive(Parser)]
#[command(name = "isp", about = "Equivariant diffusion-policy harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the run configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Dotted key=value overrides applied before validation.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(&self.config, &self.set)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Record expert demonstrations into the configured dataset directory.
    GenDemos {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train a policy on the configured dataset.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for checkpoint and metrics.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run seeded evaluation rollouts from a checkpoint.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        rollouts: usize,
        /// Evaluate the scripted expert instead of a checkpoint.
        #[arg(long)]
        oracle: bool,
        /// Write the JSON report here as well as to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the certification battery.
    Verify {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Corrupt one Wigner entry (l,row,col,delta); the battery must
        /// catch it. Exists to prove the checks can fail.
        #[arg(long, value_name = "L,ROW,COL,DELTA")]
        inject_wigner_fault: Option<String>,
    },
}

fn run(cmd: Cmd) -> Result<ExitCode, CliError> {
    match cmd {
        Cmd::GenDemos { config } => {
            let cfg = config.load()?;
            let summary = demos::gen_demos(&cfg)?;
            println!(
                "wrote {} episodes to {}",
                summary.written,
                summary.path.display()
            );
            for seed in &summary.excluded {
                eprintln!("excluded failed episode seed {seed}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Train { config, out, resume } => {
            let cfg = config.load()?;
            let outcome = trainer::train(&cfg, &out, resume.as_deref())?;
            println!(
                "trained {} steps: loss {:.4} -> {:.4}; checkpoint {}",
                outcome.steps,
                outcome.first_loss,
                outcome.final_loss,
                outcome.checkpoint_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Eval { config, checkpoint, rollouts, oracle, report } => {
            let cfg = config.load()?;
            let out = evaluate::evaluate(&cfg, checkpoint.as_deref(), rollouts, oracle)?;
            let text = serde_json::to_string_pretty(&out)?;
            if let Some(path) = report {
                fs::write(path, format!("{text}\n"))?;
            }
            println!("{text}");
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Verify { config, report, inject_wigner_fault } => {
            let cfg = config.load()?;
            let fault = match &inject_wigner_fault {
                Some(raw) => Some(verify_cmd::parse_fault(raw)?),
                None => None,
            };
            let outcome = verify_cmd::run_verify(&cfg, fault.as_ref())?;
            if let Some(path) = report {
                fs::write(path, format!("{}\n", serde_json::to_string_pretty(&outcome)?))?;
            }
            print!("{}", verify_cmd::human_table(&outcome));
            Ok(if outcome.all_pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
