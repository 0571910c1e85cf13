use clap::Parser;

fn main() {
    let cli = gensr_cli::Cli::parse();
    if let Err(e) = gensr_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
