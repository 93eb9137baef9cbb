use clap::Parser;

fn main() {
    let cli = beliefspace::cli::Cli::parse();
    std::process::exit(beliefspace::cli::main_with(&cli));
}
