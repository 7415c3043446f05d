use clap::Parser;

fn main() {
    let cli = chainsolver::cli::Cli::parse();
    if let Err(err) = chainsolver::cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
