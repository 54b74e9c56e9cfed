use clap::Parser;

use spinquad_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            if let Some(report) = &outcome.report {
                print!("{report}");
            }
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(dir) = &outcome.out_dir {
                eprintln!("wrote {} files to {}", outcome.files.len(), dir.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
