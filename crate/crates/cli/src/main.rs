use clap::Parser;

fn main() {
    let cli = feynwick_cli::Cli::parse();
    std::process::exit(feynwick_cli::run(&cli));
}
