use std::path::{Path, PathBuf};
use std::process::ExitCode;

use backstep::controller::synthesize;
use backstep::diagnostics::fit_records;
use backstep::output::write_run;
use backstep::verify::verify;
use backstep::{run_scenario, Error, Mode, ScenarioFile};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

/// Exit code for parse and usage errors.
const EXIT_USAGE: u8 = 1;
/// Exit code when `verify` ran but at least one check failed.
const EXIT_VERIFY_FAILED: u8 = 7;

#[derive(Parser)]
#[command(name = "backstep", version, about = "Backstepping control of an ODE-heat-ODE cascade")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write CSV tables and a JSON report.
    Simulate {
        /// Scenario file, or `bundled:<name>`.
        #[arg(long)]
        config: String,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the kernel and operator report as JSON.
    Synthesize {
        #[arg(long)]
        config: String,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite and print a summary table.
    Verify {
        #[arg(long)]
        config: String,
        /// Print the checks as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run one scenario per value of a parameter, in parallel.
    Sweep {
        #[arg(long)]
        config: String,
        /// Dotted path into the scenario, e.g. `gains.c.1`.
        #[arg(long)]
        param: String,
        /// Comma-separated JSON values, or one JSON array.
        #[arg(long)]
        values: String,
        #[arg(long)]
        mode: Option<Mode>,
        /// Per-value output directories are created below this one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(config: &str) -> backstep::Result<ScenarioFile> {
    match config.strip_prefix("bundled:") {
        Some(name) => ScenarioFile::bundled(name),
        None => ScenarioFile::load(Path::new(config)),
    }
}

fn parse_values(text: &str) -> backstep::Result<Vec<Value>> {
    let t = text.trim();
    if t.starts_with('[') {
        if let Value::Array(items) = serde_json::from_str(t)? {
            return Ok(items);
        }
    }
    t.split(',').map(|v| Ok(serde_json::from_str(v.trim())?)).collect()
}

fn dir_name(param: &str, value: &Value) -> String {
    let raw = format!("{param}={value}");
    raw.chars().map(|c| if c.is_ascii_alphanumeric() || "=.-_".contains(c) { c } else { '_' }).collect()
}

fn simulate(config: &str, mode: Option<Mode>, out: &Path) -> backstep::Result<()> {
    let mut file = load(config)?;
    if let Some(m) = mode {
        file.mode = m;
    }
    let sc = file.resolve()?;
    let run = run_scenario(&sc.plant, &sc.grid, &sc.gains, sc.mode, &sc.initial, &sc.options)?;
    write_run(&sc.name, &run, out)?;
    let last = run.records.last();
    println!(
        "{}",
        json!({
            "scenario": sc.name,
            "mode": sc.mode,
            "out": out,
            "records": run.records.len(),
            "diverged_at": run.diverged_at,
            "theta_end": last.map(|r| r.theta),
        })
    );
    Ok(())
}

fn synthesize_cmd(config: &str, out: Option<&Path>) -> backstep::Result<()> {
    let sc = load(config)?.resolve()?;
    let cs = synthesize(&sc.plant, &sc.gains, &sc.grid, sc.options.stencils)?;
    let text = serde_json::to_string_pretty(&cs.report)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn sweep(config: &str, param: &str, values: &str, mode: Option<Mode>, out: Option<&Path>) -> backstep::Result<()> {
    let mut base = load(config)?;
    if let Some(m) = mode {
        base.mode = m;
    }
    let values = parse_values(values)?;
    let results: Vec<Value> = values
        .par_iter()
        .map(|v| {
            let outcome = (|| -> backstep::Result<Value> {
                let sc = base.with_param(param, v.clone())?.resolve()?;
                let run = run_scenario(&sc.plant, &sc.grid, &sc.gains, sc.mode, &sc.initial, &sc.options)?;
                if let Some(root) = out {
                    write_run(&sc.name, &run, &root.join(dir_name(param, v)))?;
                }
                let fit = fit_records(&run.records, |r| r.theta).ok();
                Ok(json!({
                    "value": v,
                    "diverged_at": run.diverged_at,
                    "theta_end": run.records.last().map(|r| r.theta),
                    "lambda_fit": fit.map(|f| f.lambda),
                    "r_squared": fit.map(|f| f.r_squared),
                }))
            })();
            outcome.unwrap_or_else(|e| json!({ "value": v, "error": e.kind(), "message": e.to_string() }))
        })
        .collect();
    for r in &results {
        println!("{r}");
    }
    Ok(())
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("{}", json!({ "error": e.kind(), "code": e.exit_code(), "message": e.to_string() }));
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let result = match &cli.command {
        Command::Simulate { config, mode, out } => simulate(config, *mode, out),
        Command::Synthesize { config, out } => synthesize_cmd(config, out.as_deref()),
        Command::Verify { config, json } => match load(config).and_then(|f| verify(&f)) {
            Ok(report) => {
                if *json {
                    println!("{}", serde_json::to_string_pretty(&report).expect("serializable report"));
                } else {
                    print!("{}", report.table());
                }
                if !report.all_pass() {
                    return ExitCode::from(EXIT_VERIFY_FAILED);
                }
                Ok(())
            }
            Err(e) => Err(e),
        },
        Command::Sweep { config, param, values, mode, out } => sweep(config, param, values, *mode, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
