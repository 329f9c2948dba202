use clap::Parser;

fn main() {
    let cli = qtraj_cli::Cli::parse();
    std::process::exit(qtraj_cli::run(&cli));
}
