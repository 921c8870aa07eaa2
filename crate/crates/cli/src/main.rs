use clap::Parser;

fn main() {
    let cli = spill_cli::Cli::parse();
    if let Err(e) = spill_cli::run(cli) {
        eprintln!("spill: {e}");
        std::process::exit(e.exit_code());
    }
}
