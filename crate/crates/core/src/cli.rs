//! Command-line front end: `keygen`, `simulate`, `verify` and `oracle`.
//!
//! Settings come from an optional JSON config file, overridden field by field by flags. All
//! randomness derives from `seed`. Outputs carry no timestamps, so the same config always
//! produces the same bytes.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assurance::{verify, Policy, SchemeModel, VerifyOptions, EXIT_OK, EXIT_SECURITY, SCHEMA_VERSION};
use crate::collusion::all_cases;
use crate::entropy::{entropy, LinearVariable};
use crate::keyplan::{
    default_modulus, example1_table, example2_table, generate_table, CoefficientTable, KeyPlanError,
    DEFAULT_MAX_ATTEMPTS,
};
use crate::oracle::{brute_entropy, brute_mi, brute_security_check, OracleBudget, OracleError};
use crate::params::{ParamsError, SystemParams};
use crate::protocol::{run_protocol, Inputs, SourceKeySample};

pub const EXIT_CONFIG: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "secagg", version, about = "Multi-server secure aggregation: keys, simulation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate (or load) a coefficient table and write it as canonical JSON.
    Keygen(Flags),
    /// Run the protocol once on seeded or file-supplied inputs and write the transcript.
    Simulate(Flags),
    /// Check correctness, security, converse bounds and rates; exit code reflects the outcome.
    Verify(Flags),
    /// Cross-check the rank calculus against exhaustive enumeration.
    Oracle(Flags),
}

#[derive(Debug, Clone, Default, Args)]
struct Flags {
    #[arg(long = "U")]
    u: Option<usize>,
    #[arg(long = "V")]
    v: Option<usize>,
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    q: Option<u64>,
    /// Input length in symbols.
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use a fixed example table (1 or 2).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    example: Option<u8>,
    /// Load the table from a JSON file.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Write the result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `exhaustive` or `sample:N`.
    #[arg(long)]
    policy: Option<String>,
    /// JSON config file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inputs for `simulate`, as a `[U][V][L]` JSON array.
    #[arg(long)]
    inputs: Option<PathBuf>,
}

/// Everything a command needs, after merging the config file and flags.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "U", default, skip_serializing_if = "Option::is_none")]
    pub u: Option<usize>,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<usize>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<PathBuf>,
}

impl RunConfig {
    /// Fields set in `over` replace those in `self`.
    pub fn overridden_by(self, over: RunConfig) -> RunConfig {
        RunConfig {
            u: over.u.or(self.u),
            v: over.v.or(self.v),
            t: over.t.or(self.t),
            q: over.q.or(self.q),
            l: over.l.or(self.l),
            seed: over.seed.or(self.seed),
            example: over.example.or(self.example),
            table: over.table.or(self.table),
            out: over.out.or(self.out),
            policy: over.policy.or(self.policy),
            inputs: over.inputs.or(self.inputs),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.l.unwrap_or(1)
    }

    pub fn policy(&self) -> Result<Policy, CliError> {
        self.policy.as_deref().unwrap_or("exhaustive").parse().map_err(CliError::Config)
    }
}

impl From<Flags> for RunConfig {
    fn from(f: Flags) -> Self {
        RunConfig {
            u: f.u,
            v: f.v,
            t: f.t,
            q: f.q,
            l: f.l,
            seed: f.seed,
            example: f.example,
            table: f.table,
            out: f.out,
            policy: f.policy,
            inputs: f.inputs,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    KeyPlan(#[from] KeyPlanError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Other(String),
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Loads `--config` and applies the flags on top.
pub fn resolve_config(config_path: Option<&Path>, flags: RunConfig) -> Result<RunConfig, CliError> {
    let base = match config_path {
        Some(p) => serde_json::from_str::<RunConfig>(&read(p)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    Ok(base.overridden_by(flags))
}

fn example_table(n: u8) -> CoefficientTable {
    if n == 1 {
        example1_table()
    } else {
        example2_table()
    }
}

fn check_example_params(cfg: &RunConfig, table: &CoefficientTable) -> Result<(), CliError> {
    let p = table.params();
    let want = [
        ("U", cfg.u.map(|x| x as u64), p.servers() as u64),
        ("V", cfg.v.map(|x| x as u64), p.users_per_server() as u64),
        ("T", cfg.t.map(|x| x as u64), p.max_colluders() as u64),
        ("q", cfg.q, p.modulus()),
    ];
    for (name, given, fixed) in want {
        if let Some(g) = given {
            if g != fixed {
                return Err(CliError::Config(format!("the example table requires {name} = {fixed}, got {g}")));
            }
        }
    }
    Ok(())
}

/// Table and the number of generation attempts (zero when not generated).
pub fn load_table(cfg: &RunConfig) -> Result<(CoefficientTable, usize), CliError> {
    match (cfg.example, &cfg.table) {
        (Some(_), Some(_)) => Err(CliError::Config("--example and --table are mutually exclusive".into())),
        (Some(n), None) => {
            let t = example_table(n);
            check_example_params(cfg, &t)?;
            let p = t.params().with_seed(cfg.seed());
            Ok((CoefficientTable::from_rows(p, &rows_of(&t))?, 0))
        }
        (None, Some(path)) => {
            let t = CoefficientTable::from_json(&read(path)?, cfg.seed())?;
            check_example_params(cfg, &t)?;
            Ok((t, 0))
        }
        (None, None) => {
            let (Some(u), Some(v), Some(t)) = (cfg.u, cfg.v, cfg.t) else {
                return Err(CliError::Config("need --U, --V and --T (or --example / --table)".into()));
            };
            let q = match cfg.q {
                Some(q) => q,
                None => default_modulus(u, v, t)?,
            };
            let params = SystemParams::new(u, v, t, q, cfg.seed())?;
            let g = generate_table(&params, DEFAULT_MAX_ATTEMPTS)?;
            Ok((g.table, g.attempts))
        }
    }
}

fn rows_of(t: &CoefficientTable) -> Vec<Vec<u64>> {
    t.matrix().row_iter().map(<[u64]>::to_vec).collect()
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|source| CliError::Io { path: p.to_path_buf(), source }),
        None => stdout.write_all(text.as_bytes()).map_err(|e| CliError::Other(e.to_string())),
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data");
    s.push('\n');
    s
}

fn config_value(cfg: &RunConfig, table: &CoefficientTable) -> serde_json::Value {
    let p = table.params();
    serde_json::json!({
        "request": cfg,
        "resolved": {
            "U": p.servers(),
            "V": p.users_per_server(),
            "T": p.max_colluders(),
            "q": p.modulus(),
            "l": cfg.len(),
            "seed": cfg.seed(),
            "policy": cfg.policy.clone().unwrap_or_else(|| "exhaustive".into()),
        },
    })
}

fn cmd_keygen(cfg: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let (table, attempts) = load_table(cfg)?;
    emit(cfg.out.as_deref(), &table.to_json(), stdout)?;
    let _ = writeln!(stderr, "r_star = {}, attempts = {}", table.r_star(), attempts);
    Ok(EXIT_OK)
}

fn parse_inputs(params: SystemParams, text: &str) -> Result<Inputs, CliError> {
    let grid: Vec<Vec<Vec<u64>>> =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("inputs: {e}")))?;
    if grid.len() != params.servers() || grid.iter().any(|g| g.len() != params.users_per_server()) {
        return Err(CliError::Config(format!(
            "inputs must be a {} x {} grid of vectors",
            params.servers(),
            params.users_per_server()
        )));
    }
    Inputs::new(params, grid.into_iter().flatten().collect()).map_err(|e| CliError::Config(format!("inputs: {e}")))
}

fn cmd_simulate(cfg: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let (table, _) = load_table(cfg)?;
    let params = *table.params();
    let inputs = match &cfg.inputs {
        Some(path) => parse_inputs(params, &read(path)?)?,
        None => Inputs::random(params, cfg.len(), cfg.seed()).map_err(|e| CliError::Config(e.to_string()))?,
    };
    if cfg.l.is_some_and(|l| l != inputs.len()) {
        return Err(CliError::Config(format!("--l {} does not match input length {}", cfg.len(), inputs.len())));
    }
    let n = SourceKeySample::random(&params, inputs.len(), cfg.seed()).map_err(|e| CliError::Config(e.to_string()))?;
    let tr = run_protocol(&params, &table, &inputs, &n).map_err(|e| CliError::Config(e.to_string()))?;
    emit(cfg.out.as_deref(), &tr.to_json(), stdout)?;
    let _ = writeln!(stderr, "decoded = {:?}, servers agree = {}", tr.decoded()[0], tr.servers_agree());
    Ok(EXIT_OK)
}

fn cmd_verify(cfg: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let (table, _) = load_table(cfg)?;
    let opts = VerifyOptions { policy: cfg.policy()?, seed: cfg.seed(), ..Default::default() };
    let report = verify(&table, config_value(cfg, &table), &opts).map_err(|e| CliError::Other(e.to_string()))?;
    emit(cfg.out.as_deref(), &report.to_json(), stdout)?;
    let s = &report.security;
    let _ = writeln!(
        stderr,
        "correctness {}, security {} ({} of {} cases, {} failing), rates ({}, {}, {}, {}), exit {}",
        if report.correctness_ok { "ok" } else { "FAILED" },
        if report.security_ok { "ok" } else { "FAILED" },
        s.distinct_cases,
        s.total_cases,
        s.failing_cases.len(),
        report.rates.achieved.x,
        report.rates.achieved.y,
        report.rates.achieved.z,
        report.rates.achieved.source_key,
        report.exit_code(),
    );
    if let Some(v) = &report.table_validation {
        let _ = writeln!(stderr, "table: {v}");
    }
    if !s.complete {
        let _ = writeln!(stderr, "partial coverage: {:.6}", s.coverage());
    }
    Ok(report.exit_code())
}

#[derive(Debug, Serialize)]
struct OracleComparison {
    label: String,
    rank: usize,
    enumerated: usize,
}

#[derive(Debug, Serialize)]
struct OracleReport {
    schema_version: u32,
    config: serde_json::Value,
    budget: OracleBudget,
    comparisons: Vec<OracleComparison>,
    rank_agrees: bool,
    secure_by_rank: bool,
    secure_by_enumeration: bool,
    first_failure: Option<String>,
}

fn cmd_oracle(cfg: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let (table, _) = load_table(cfg)?;
    let budget = OracleBudget::default();
    let over = |e: OracleError| CliError::Config(format!("oracle: {e}"));
    let model = SchemeModel::new(&table).map_err(|e| CliError::Other(e.to_string()))?;
    let params = *table.params();

    let mut comparisons = Vec::new();
    let all_z = model.all_z();
    comparisons.push(OracleComparison {
        label: "H(Z_all)".into(),
        rank: entropy(&all_z).map_err(|e| CliError::Other(e.to_string()))?,
        enumerated: brute_entropy(&all_z, &budget).map_err(over)?,
    });
    let mut secure_by_rank = true;
    for (k, set) in all_cases(&params) {
        let view = model.server_view(k).map_err(|e| CliError::Other(e.to_string()))?;
        let mut given: Vec<&LinearVariable> = vec![model.sum_w()];
        given.extend(model.revealed(set.iter()));
        let rank = model.security_mi(k, &set).map_err(|e| CliError::Other(e.to_string()))?;
        secure_by_rank &= rank == 0;
        comparisons.push(OracleComparison {
            label: format!("I(view{}; W | sumW, {set})", k + 1),
            rank,
            enumerated: brute_mi(&view, &model.all_w(), &given, &budget).map_err(over)?,
        });
    }
    let brute = brute_security_check(&table, &budget).map_err(over)?;
    let rank_agrees = comparisons.iter().all(|c| c.rank == c.enumerated) && brute.secure == secure_by_rank;
    let report = OracleReport {
        schema_version: SCHEMA_VERSION,
        config: config_value(cfg, &table),
        budget,
        rank_agrees,
        secure_by_rank,
        secure_by_enumeration: brute.secure,
        first_failure: brute.first_failure.map(|(k, s)| format!("server {} with {s}", k + 1)),
        comparisons,
    };
    emit(cfg.out.as_deref(), &pretty(&report), stdout)?;
    let _ = writeln!(
        stderr,
        "rank and enumeration {}; secure = {}",
        if rank_agrees { "agree" } else { "DISAGREE" },
        brute.secure
    );
    Ok(if rank_agrees && brute.secure { EXIT_OK } else { EXIT_SECURITY })
}

/// Runs the CLI on `args` (including the program name) and returns the process exit code.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (flags, f): (Flags, fn(&RunConfig, &mut dyn Write, &mut dyn Write) -> Result<i32, CliError>) =
        match cli.command {
            Command::Keygen(fl) => (fl, cmd_keygen),
            Command::Simulate(fl) => (fl, cmd_simulate),
            Command::Verify(fl) => (fl, cmd_verify),
            Command::Oracle(fl) => (fl, cmd_oracle),
        };
    let config_path = flags.config.clone();
    let result = resolve_config(config_path.as_deref(), flags.into()).and_then(|cfg| f(&cfg, stdout, stderr));
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_CONFIG
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
