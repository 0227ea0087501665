use clap::Parser;

fn main() {
    let cli = pathpainter_cli::Cli::parse();
    std::process::exit(pathpainter_cli::run(cli));
}
