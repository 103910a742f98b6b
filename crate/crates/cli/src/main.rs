use clap::Parser;
use noisemap_cli::{commands, Cli, CliError};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return;
        }
        Err(e) => {
            let err = CliError::Usage(e.to_string().trim_end().to_string());
            eprintln!("{}", err.to_json());
            std::process::exit(err.exit_code());
        }
    };
    if let Err(e) = commands::run(cli) {
        if e.is_broken_pipe() {
            return;
        }
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
