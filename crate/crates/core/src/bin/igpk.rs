use clap::Parser;

fn main() {
    let cli = igpk::cli::Cli::parse();
    if let Err(e) = igpk::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
