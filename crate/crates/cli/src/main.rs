use std::process::ExitCode;

use clap::Parser;
use d3d_cli::{run, Cli, RunConfig};

fn threads_from_env() -> Result<(), String> {
    let Ok(v) = std::env::var("D3D_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("D3D_THREADS must be a positive integer, got `{v}`"))?;
    d3d::parallel::init_threads(n);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads_from_env()
        .map_err(anyhow::Error::msg)
        .and_then(|()| RunConfig::resolve(&cli.overrides))
        .and_then(|cfg| run(cli.command, &cfg));
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            // one line: the error and its causes joined
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
