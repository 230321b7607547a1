use clap::Parser;

use nvidia_pcm::cli::{self, exit_code, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version print to stdout and exit cleanly; real usage
            // errors exit with the configuration-error code so scripts never
            // confuse them with "no platform matched".
            let code = if err.use_stderr() { exit_code::CONFIG } else { 0 };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    std::process::exit(cli::run(cli));
}
