use std::process::ExitCode;

use clap::Parser;

use unet_cd_cli::{configure_threads, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match configure_threads().and_then(|()| run(&cli)) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("unetcd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
