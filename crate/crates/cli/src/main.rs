use clap::Parser;

use ncml_cli::error::CliError;
use ncml_cli::{init_threads, run, Cli};

fn fail(e: CliError) -> ! {
    eprintln!("{}", e.to_json_line());
    std::process::exit(e.exit_code());
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => fail(CliError::new(
            ncml_cli::ErrorKind::Config,
            "usage",
            e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: "),
        )),
    };
    match init_threads().and_then(|()| run(&cli)) {
        Ok(summary) => println!("{summary}"),
        Err(e) => fail(e),
    }
}
