use clap::Parser;
use feedrisk_cli::Cli;

fn main() {
    let cli = Cli::parse();
    match cli.run() {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
        }
        Err(e) => {
            let report = serde_json::json!({ "error": e.report() });
            eprintln!("{report}");
            std::process::exit(e.exit_code());
        }
    }
}
