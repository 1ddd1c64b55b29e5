use clap::Parser;

fn main() {
    let cli = esnnet_cli::Cli::parse();
    if let Err(err) = esnnet_cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(esnnet_cli::exit_code(&err));
    }
}
