use clap::Parser;

fn main() {
    let cli = apf::cli::Cli::parse();
    if let Err(err) = apf::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
