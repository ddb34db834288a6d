use std::process::ExitCode;

use clap::Parser;
use tama_cli::args::{CacheAction, Cli, Command};
use tama_cli::{cache_cmd, detect, eval, render, synth, CliError, EXIT_OK};

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Detect(args) => {
            let cfg = args.resolve()?;
            let summary = detect::cmd_detect(&cfg)?;
            for s in &summary.series {
                println!(
                    "{}: {} windows, {} failed, {} anomalous points",
                    s.name, s.windows, s.failed_windows, s.anomaly_points
                );
            }
        }
        Command::Eval(args) => {
            let run = eval::cmd_eval(&args)?;
            print!("{}", run.table());
        }
        Command::SweepPat(args) => {
            let (path, _) = eval::cmd_sweep(&args)?;
            println!("wrote {}", path.display());
        }
        Command::GenSynth(args) => {
            let path = synth::cmd_gen_synth(&args)?;
            println!("wrote {}", path.display());
        }
        Command::Render(args) => {
            let files = render::cmd_render(&args)?;
            println!("wrote {} images to {}", files.len(), args.out.display());
        }
        Command::Cache { action } => match action {
            CacheAction::Inspect { dir } => print!("{}", cache_cmd::cmd_inspect(dir.as_deref())?),
            CacheAction::Purge { dir } => println!("removed {} entries", cache_cmd::cmd_purge(dir.as_deref())?),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into()))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
