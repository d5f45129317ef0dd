use clap::Parser;

use sax_service::cli::{run, Cli, OutputFormat};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let format = cli.format;
    match run(cli) {
        Ok(out) => match format {
            OutputFormat::Text => println!("{}", out.text),
            OutputFormat::Json => println!("{}", serde_json::to_string_pretty(&out.json).expect("output serializes")),
        },
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(1);
        }
    }
}
