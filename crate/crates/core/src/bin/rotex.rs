use clap::Parser;

fn main() {
    let cli = rotex::cli::Cli::parse();
    std::process::exit(rotex::cli::run(cli));
}
