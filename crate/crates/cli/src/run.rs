//! Experiment drivers: run a suite, print its checks, write JSON/CSV/snapshot
//! outputs under the configured directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use solitonlab::flow::Stepper;
use solitonlab::io::write_field;
use solitonlab::suite::{
    barrier_suite, check_matrix_resolution, default_flow_config, flow_suite, identity_suite,
    second_variation_suite, spectrum_suite, SuiteReport,
};
use solitonlab::{sphere_base, torus_base, BackendGeometry, BackendKind, LabError};

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Identities,
    Flow,
    Spectrum,
    SecondVariation,
    Barrier,
    All,
}

impl Command {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "identities" => Command::Identities,
            "flow" => Command::Flow,
            "spectrum" => Command::Spectrum,
            "second-variation" => Command::SecondVariation,
            "barrier" => Command::Barrier,
            "all" => Command::All,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Identities => "identities",
            Command::Flow => "flow",
            Command::Spectrum => "spectrum",
            Command::SecondVariation => "second-variation",
            Command::Barrier => "barrier",
            Command::All => "all",
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            Command::SecondVariation => "second_variation",
            other => other.name(),
        }
    }

    fn default_resolution(self, backend: BackendKind) -> usize {
        match (backend, self) {
            (BackendKind::Torus, Command::Identities) => 64,
            (BackendKind::Torus, Command::Flow) => 32,
            (BackendKind::Torus, _) => 16,
            (BackendKind::Sphere, Command::Identities) => 128,
            (BackendKind::Sphere, _) => 64,
        }
    }

    fn default_states(self, backend: BackendKind) -> usize {
        match (backend, self) {
            (_, Command::Identities) => 20,
            (BackendKind::Torus, Command::Spectrum) => 3,
            (BackendKind::Sphere, Command::Spectrum) => 5,
            (BackendKind::Torus, Command::Flow) => 5,
            (BackendKind::Sphere, Command::Flow) => 2,
            (_, Command::SecondVariation) => 5,
            _ => 10,
        }
    }

    fn uses_matrices(self) -> bool {
        matches!(self, Command::Spectrum | Command::SecondVariation)
    }
}

#[derive(Debug)]
pub enum RunError {
    Usage(String),
    Numerical(LabError),
}

impl From<LabError> for RunError {
    fn from(e: LabError) -> Self {
        if e.is_numerical() {
            RunError::Numerical(e)
        } else {
            RunError::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> Self {
        RunError::Usage(e.to_string())
    }
}

const TOOL: &str = "solitonlab";
const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One experiment bound to its geometry, checked before anything runs.
struct Plan {
    command: Command,
    geometry: BackendGeometry,
    states: usize,
}

impl Plan {
    fn new(command: Command, cfg: &RunConfig) -> Result<Self, RunError> {
        if command == Command::Barrier && cfg.backend != BackendKind::Sphere {
            return Err(RunError::Usage(
                "barrier needs a backend with positive lambda (use --backend sphere)".into(),
            ));
        }
        let n = cfg.resolution.unwrap_or_else(|| command.default_resolution(cfg.backend));
        let geometry = match cfg.backend {
            BackendKind::Torus => torus_base(n)?,
            BackendKind::Sphere => sphere_base(n)?,
        };
        if command.uses_matrices() {
            check_matrix_resolution(&geometry)?;
        }
        let states = match command {
            Command::Flow => cfg.flow.runs.or(cfg.states),
            _ => cfg.states,
        }
        .unwrap_or_else(|| command.default_states(cfg.backend));
        Ok(Plan { command, geometry, states })
    }
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let bytes = serde_json::to_vec(cfg).unwrap_or_default();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn meta(plan: &Plan, cfg: &RunConfig) -> Value {
    json!({
        "tool": TOOL,
        "version": VERSION,
        "command": plan.command.name(),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "backend": cfg.backend.name(),
        "resolution": plan.geometry.resolution(),
        "tolerances": cfg.tolerances,
    })
}

fn csv_comments(plan: &Plan, cfg: &RunConfig) -> Vec<String> {
    vec![
        format!("{TOOL} {VERSION} {}", plan.command.name()),
        format!("config_hash {}", config_hash(cfg)),
        format!(
            "seed {} backend {} resolution {}",
            cfg.seed,
            cfg.backend.name(),
            plan.geometry.resolution()
        ),
    ]
}

fn write_json(path: &Path, value: &Value) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn print_report(report: &SuiteReport) {
    for c in &report.checks {
        let status = if c.pass { "PASS" } else { "FAIL" };
        println!(
            "{status} {}/{} {}: {:.3e} {} {:.1e}",
            report.experiment,
            report.backend.name(),
            c.name,
            c.value,
            c.relation,
            c.tolerance
        );
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, RunError> {
    Ok(serde_json::to_value(v)?)
}

fn run_one(plan: &Plan, cfg: &RunConfig, out: &Path) -> Result<SuiteReport, RunError> {
    let geom = &plan.geometry;
    let tol = &cfg.tolerances;
    let seed = cfg.seed;
    let stem = plan.command.file_stem();
    let (report, extra) = match plan.command {
        Command::Identities => (identity_suite(geom, seed, plan.states, tol)?, json!({})),
        Command::Flow => {
            let flow_cfg = cfg.flow.apply(default_flow_config(geom));
            flow_cfg.validate()?;
            let (report, runs) = flow_suite(geom, seed, plan.states, &flow_cfg, tol)?;
            let comments = csv_comments(plan, cfg);
            for run in &runs {
                run.trace.write_csv(&out.join(format!("flow_seed{}.csv", run.seed)), &comments)?;
                if let Some(state) = run.trace.terminal_state() {
                    write_field(state.potential(), &out.join(format!("flow_seed{}_terminal.slab", run.seed)))?;
                }
            }
            let rate_checked = flow_cfg.stepper == Stepper::ExplicitRk;
            (
                report,
                json!({ "flow_config": to_value(&flow_cfg)?, "rate_checked": rate_checked, "runs": to_value(&runs)? }),
            )
        }
        Command::Spectrum => {
            let (report, spectra) = spectrum_suite(geom, seed, plan.states, cfg.eigenpairs, tol)?;
            if let Some(base) = spectra.first() {
                for (i, field) in base.eigenfields.iter().enumerate() {
                    write_field(field, &out.join(format!("spectrum_mode{i}.slab")))?;
                }
            }
            (report, json!({ "spectra": to_value(&spectra)? }))
        }
        Command::SecondVariation => {
            let (report, verdict, samples) = second_variation_suite(geom, seed, plan.states, tol)?;
            (report, json!({ "verdict": to_value(&verdict)?, "off_critical": to_value(&samples)? }))
        }
        Command::Barrier => {
            let (report, outcome) = barrier_suite(geom, seed, plan.states, tol)?;
            let comments = csv_comments(plan, cfg);
            outcome.kernel.write_csv(&out.join("barrier_mu.csv"), &comments)?;
            outcome.quadrupole.write_csv(&out.join("barrier_p2.csv"), &comments)?;
            (report, json!({ "outcome": to_value(&outcome)? }))
        }
        Command::All => unreachable!("expanded by execute"),
    };
    print_report(&report);
    let doc = json!({
        "meta": meta(plan, cfg),
        "states": plan.states,
        "report": to_value(&report)?,
        "details": extra,
    });
    write_json(&out.join(format!("{stem}.json")), &doc)?;
    Ok(report)
}

/// Runs `command` and returns whether every check passed.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<bool, RunError> {
    let commands: Vec<Command> = match command {
        Command::All => {
            let mut list = vec![
                Command::Identities,
                Command::Spectrum,
                Command::Flow,
                Command::SecondVariation,
            ];
            if cfg.backend == BackendKind::Sphere {
                list.push(Command::Barrier);
            }
            list
        }
        single => vec![single],
    };
    // Validate every plan before computing anything.
    let plans = commands
        .into_iter()
        .map(|c| Plan::new(c, cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let out: PathBuf = cfg.output.clone();
    fs::create_dir_all(&out)?;
    let mut summary = Vec::new();
    let mut pass = true;
    for plan in &plans {
        let report = run_one(plan, cfg, &out)?;
        pass &= report.pass;
        summary.push(json!({
            "command": plan.command.name(),
            "resolution": plan.geometry.resolution(),
            "pass": report.pass,
            "failures": report.failures().iter().map(|c| c.name.clone()).collect::<Vec<_>>(),
        }));
    }
    if command == Command::All {
        let doc = json!({
            "meta": {
                "tool": TOOL,
                "version": VERSION,
                "command": "all",
                "config_hash": config_hash(cfg),
                "seed": cfg.seed,
                "backend": cfg.backend.name(),
                "tolerances": cfg.tolerances,
            },
            "experiments": summary,
            "pass": pass,
        });
        write_json(&out.join("all.json"), &doc)?;
    }
    println!("{}: {}", command.name(), if pass { "PASS" } else { "FAIL" });
    Ok(pass)
}
