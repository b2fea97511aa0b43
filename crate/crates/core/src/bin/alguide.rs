use clap::Parser;

fn main() {
    let cli = alguide::cli::Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = alguide::cli::execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
