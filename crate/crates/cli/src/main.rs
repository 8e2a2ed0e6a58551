use clap::Parser;

fn main() {
    let cli = craft_cli::Cli::parse();
    if let Err(e) = craft_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
