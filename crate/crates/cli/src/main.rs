//! `loopgen` command-line interface.
//!
//! Exit codes: 0 on success, 2 for configuration and input errors, 3 when a
//! run aborts on non-finite numbers.

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use loopgen::Error;

mod ablate;
mod eval;
mod generate;
mod settings;
mod train;

#[derive(Parser)]
#[command(name = "loopgen", version, about = "Seamless looping sequences by cyclic latent-shift sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one looping (or long) sequence and write frames, latents and a report.
    Generate(generate::GenerateArgs),
    /// Train the toy transformer denoiser on synthetic periodic data.
    TrainToy(train::TrainArgs),
    /// Compute the loop report of a frame directory or tensor dump.
    Eval(eval::EvalArgs),
    /// Sweep the window shift and rope mode with paired seeds.
    Ablate(ablate::AblateArgs),
}

fn exit_code(err: &Error) -> u8 {
    if err.is_numeric() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => generate::run(&args),
        Command::TrainToy(args) => train::run(&args),
        Command::Eval(args) => eval::run(&args),
        Command::Ablate(args) => ablate::run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
