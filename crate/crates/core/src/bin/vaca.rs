use clap::Parser;

fn main() {
    let cli = vaca::cli::Cli::parse();
    let result = vaca::cli::configure_threads().and_then(|_| vaca::cli::run(cli, &mut std::io::stdout().lock()));
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
