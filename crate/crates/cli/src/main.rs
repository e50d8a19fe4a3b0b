//! detcal: accuracy and calibration evaluation for object detectors.

mod args;
mod calibrate;
mod evaluate;
mod inputs;
mod output;
mod reliability;
mod sweep;

use clap::Parser;

use args::{Cli, Command};

fn main() {
    let cli = Cli::parse();
    let json_errors = cli.json_errors;
    let seed = cli.seed;
    let result = match cli.command {
        Command::Evaluate(args) => evaluate::run(args, seed),
        Command::CalibrateFit(args) => calibrate::fit(args),
        Command::CalibrateApply(args) => calibrate::apply(args),
        Command::Reliability(args) => reliability::run(args),
        Command::Sweep(args) => sweep::run(args),
    };
    if let Err(error) = result {
        output::report_error(&error, json_errors);
        std::process::exit(output::exit_code(&error));
    }
}
