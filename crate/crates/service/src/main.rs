use clap::Parser;
use vqclab_service::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let code = match run(cli, &mut std::io::stdout()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    };
    std::process::exit(code);
}
