use clap::Parser;

fn main() {
    let cli = splitfdr::cli::Cli::parse();
    if let Err(e) = splitfdr::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.class().exit_code());
    }
}
