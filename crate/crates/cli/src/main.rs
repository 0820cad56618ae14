// SPDX-License-Identifier: Apache-2.0

mod args;
mod commands;

use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use args::{Cli, Command};
use commands::CheckFailed;
use msc_core::config::Config;
use msc_core::MscError;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return EXIT_NUMERICAL;
    }
    match err.downcast_ref::<MscError>() {
        Some(MscError::Numerical(_)) => EXIT_NUMERICAL,
        Some(MscError::Config { .. }) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.global.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Config => commands::config(&cfg),
        Command::Synth { count, out } => commands::synth(&cfg, count, &out),
        Command::Viewgen { input, out, format } => commands::viewgen(&cfg, &input, &out, &format),
        Command::MatchStats { data, out } => commands::match_stats(&cfg, &data, out.as_deref()),
        Command::Pretrain {
            data,
            metrics,
            checkpoint,
            resume,
            steps,
        } => {
            if let Some(s) = steps {
                cfg.steps = s;
            }
            commands::pretrain(&cfg, &data, &metrics, &checkpoint, resume.as_deref())
        }
        Command::Bench { sizes, out } => commands::bench(&cfg, &sizes, out.as_deref()),
        Command::Gradcheck { seeds, step, perturb } => commands::gradcheck(&cfg, seeds, step, perturb.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
