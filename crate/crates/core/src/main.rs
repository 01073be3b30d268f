use clap::Parser;

fn main() {
    let args = maxwell_hmm::cli::Args::parse();
    std::process::exit(maxwell_hmm::cli::main_with_args(args));
}
