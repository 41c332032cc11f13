use clap::Parser;
use visprobe::{execute, Cli, Outcome};

fn main() {
    let code = match execute(Cli::parse()) {
        Ok(outcome) => {
            if let Outcome::Partial(msg) = &outcome {
                eprintln!("partial: {msg}");
            }
            outcome.exit_code()
        }
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            f.exit_code()
        }
    };
    std::process::exit(code);
}
