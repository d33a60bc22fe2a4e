use clap::Parser;

fn main() {
    let cli = csrp::cli::Cli::parse();
    if let Err(e) = csrp::cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
