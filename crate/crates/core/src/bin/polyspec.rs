use std::process::ExitCode;

use clap::Parser;
use polyspec::cli::{emit, error_json, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = cli.config().and_then(|cfg| {
        if let Some(t) = cfg.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| polyspec::Error::InvalidArgument(e.to_string()))?;
        }
        let out = run(&cfg)?;
        emit(&cfg, &out)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
