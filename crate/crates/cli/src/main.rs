use clap::Parser;

fn main() {
    let cli = vididi_cli::Cli::parse();
    match vididi_cli::run(cli) {
        Ok(out) => print!("{out}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
