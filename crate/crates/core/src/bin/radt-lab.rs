use clap::Parser;

fn main() {
    let cli = radt_core::cli::Cli::parse();
    std::process::exit(radt_core::cli::run(cli));
}
