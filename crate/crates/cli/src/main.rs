mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use config::RunConfig;
use run::{Command, RunError};

const USAGE: &str = "\
usage: solitonlab <identities|flow|spectrum|second-variation|barrier|all> [--config PATH] [--key value ...]

  --key value            set a [run] key (backend, resolution, seed, states, eigenpairs, output)
  --section.key value    set a key in [tolerances] or [flow]

SOLITONLAB_OUT overrides the output directory.
exit status: 0 pass, 1 tolerance failure, 2 usage or config error, 3 numerical abort";

struct Args {
    command: Command,
    config: Option<PathBuf>,
    flags: Vec<(String, String)>,
}

fn parse_args(mut args: impl Iterator<Item = String>) -> Result<Args, String> {
    let command = args.next().ok_or("missing command")?;
    let command = Command::parse(&command).ok_or_else(|| format!("unknown command `{command}`"))?;
    let mut config = None;
    let mut flags = Vec::new();
    while let Some(arg) = args.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| format!("unexpected argument `{arg}`"))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let value = args.next().ok_or_else(|| format!("flag --{key} needs a value"))?;
                (key.to_string(), value)
            }
        };
        if key == "config" {
            config = Some(PathBuf::from(value));
        } else {
            flags.push((key, value));
        }
    }
    Ok(Args { command, config, flags })
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().skip(1).collect();
    if raw.iter().any(|a| a == "--help" || a == "-h") {
        println!("{USAGE}");
        return ExitCode::SUCCESS;
    }
    let args = match parse_args(raw.into_iter()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}\n\n{USAGE}");
            return ExitCode::from(2);
        }
    };
    let mut cfg = match RunConfig::load(args.config.as_deref(), &args.flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(dir) = std::env::var_os("SOLITONLAB_OUT") {
        cfg.output = PathBuf::from(dir);
    }
    match run::execute(args.command, &cfg) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(RunError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(RunError::Numerical(e)) => {
            eprintln!("numerical abort: {e}");
            ExitCode::from(3)
        }
    }
}
