use clap::Parser;

fn main() {
    let cli = romforge::Cli::parse();
    if let Err(e) = romforge::run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
