use clap::Parser;

fn main() {
    let cli = hfsda::cli::Cli::parse();
    std::process::exit(hfsda::cli::run(&cli));
}
