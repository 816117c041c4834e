use clap::Parser;

fn main() {
    let cli = nde_cli::Cli::parse();
    std::process::exit(nde_cli::run(cli));
}
