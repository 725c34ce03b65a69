use bridgemon_cli::commands::{run, Cli};
use bridgemon_cli::exit;
use clap::Parser;

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit::code_of(&e));
    }
}
