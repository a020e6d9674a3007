use std::process::ExitCode;

use clap::{Parser, Subcommand};
use panorad::io::commands::{
    cmd_augment, cmd_eval, cmd_fixture, cmd_render, cmd_train, AugmentArgs, EvalArgs, FixtureArgs, RenderArgs, TrainArgs,
};
use panorad::Error;

/// Novel-view synthesis from one RGB-D panorama.
#[derive(Parser, Debug)]
#[command(name = "panorad", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic RGB-D scene
    Fixture(FixtureArgs),
    /// Generate virtual views and the ray cache
    Augment(AugmentArgs),
    /// Fit the radiance field to a ray cache
    Train(TrainArgs),
    /// Render panoramas from a checkpoint
    Render(RenderArgs),
    /// Score renders against references
    Eval(EvalArgs),
}

fn fail(kind: &str, message: &str) -> ExitCode {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
    ExitCode::FAILURE
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("PANORAD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("PANORAD_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    match cli.command {
        Command::Fixture(a) => cmd_fixture(&a),
        Command::Augment(a) => cmd_augment(&a).map(drop),
        Command::Train(a) => cmd_train(&a).map(drop),
        Command::Render(a) => cmd_render(&a).map(drop),
        Command::Eval(a) => {
            for row in cmd_eval(&a)? {
                println!("{}\t{:.3}\t{:.4}", row.image_id, row.psnr_db, row.ssim);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return fail("usage", first.trim_start_matches("error: "));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
