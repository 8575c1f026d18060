use clap::Parser;
use fsde_lab::commands::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("fsde-lab: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
