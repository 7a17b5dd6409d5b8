//! Command-line front door: wires JSON configs to the library modules and
//! emits machine-readable result payloads.
//!
//! Exit codes separate findings from failures:
//!
//! ```text
//! 0  the requested check or build succeeded
//! 1  a certified mathematical failure (e.g. an improper loss, a violated
//!    axiom) -- a valid result, reported with its witness
//! 2  usage or I/O error (missing file, malformed JSON, bad flags)
//! ```
//!
//! Every payload embeds a hash of the resolved configuration and the seed,
//! so reruns with the same config and seed are byte-identical; wall-clock
//! metadata goes to a sidecar file next to `--out`, never into the payload.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use properpo::constructors::{build_from_spec, FactorySpec, FnDescriptor};
use properpo::klst::{
    verify_klst, ChoiceTable, DEFAULT_ALPHA_MONO, DEFAULT_TOL, LCS_ALPHA_SAMPLE,
};
use properpo::loss_catalog::{self, CatalogId};
use properpo::pipeline::{
    length_normalize, recover_reward_diffs, solve_step1, LengthNorm, PipelineConfig,
};
use properpo::proper_loss::{check_proper, ProperCertificate, VectorPotential};
use properpo::trainer::{evaluate, generate, trace_to_csv, train, DataMode};
use properpo::{core_math::ProbVector, Error, ScalarFn};

#[derive(Parser)]
#[command(name = "properpo", version, about = "Proper-loss preference optimization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file for subcommands that take structured input.
    #[arg(long)]
    config: Option<String>,
    /// Write the result payload here instead of stdout (a `.meta.json`
    /// sidecar with timing data is written next to it).
    #[arg(long)]
    out: Option<String>,
    /// RNG seed for randomized work; embedded in the payload.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Numeric comparison tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Grid resolution for simplex certification.
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Subcommand, Clone)]
enum Command {
    /// List the loss catalog (or one entry) with closed-form availability.
    Catalog {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        loss: Option<String>,
        #[command(flatten)]
        params: LossParams,
    },
    /// Grid-certify properness of a catalog loss.
    CheckProper {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        loss: String,
        #[command(flatten)]
        params: LossParams,
    },
    /// Build a proper loss from a convex potential spec.
    PhipoBuild {
        #[command(flatten)]
        common: Common,
        /// Named potential (alternative to --config with a factory spec).
        #[arg(long)]
        potential: Option<String>,
        #[arg(long)]
        symmetrize: bool,
    },
    /// Build a proper loss realizing a surrogate through a choice function.
    CompositeBuild {
        #[command(flatten)]
        common: Common,
    },
    /// Verify the choice-structure axioms of a preference table.
    KlstVerify {
        #[command(flatten)]
        common: Common,
        /// Choice table JSON (alternative to --config).
        #[arg(long)]
        table: Option<String>,
        #[arg(long)]
        alpha_mono: Option<f64>,
    },
    /// Solve the regularized reward-projection step for a reward vector.
    SolveStep1 {
        #[command(flatten)]
        common: Common,
    },
    /// Length-normalize token factors by the matching generalized mean.
    Lennorm {
        #[command(flatten)]
        common: Common,
    },
    /// Train a tabular policy on synthetic preferences.
    Train {
        #[command(flatten)]
        common: Common,
        /// Also write the optimization trace as CSV here.
        #[arg(long)]
        trace: Option<String>,
    },
}

#[derive(Args, Clone, Serialize)]
struct LossParams {
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
}

impl LossParams {
    fn resolve(&self) -> loss_catalog::Params {
        let mut p = loss_catalog::Params::default();
        if let Some(tau) = self.tau {
            p.tau = tau;
        }
        if let Some(mu) = self.mu {
            p.mu = mu;
        }
        if let Some(beta) = self.beta {
            p.beta = beta;
        }
        if let Some(n) = self.n {
            p.n = n;
        }
        p
    }
}

/// Result envelope; field order fixes the payload byte layout.
#[derive(Serialize)]
struct Payload<T: Serialize> {
    command: &'static str,
    config_hash: String,
    seed: u64,
    pass: bool,
    result: T,
}

#[derive(Serialize)]
struct Sidecar {
    written_at_unix_ms: u128,
    payload_path: String,
}

fn config_hash(command: &str, parts: &[&str]) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    for p in parts {
        h.update([0u8]);
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    d.iter().map(|b| format!("{b:02x}")).collect()
}

fn read_config(common: &Common) -> Result<String, CliError> {
    match &common.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {path}: {e}"))),
        None => Err(CliError::usage("this subcommand requires --config".into())),
    }
}

fn parse_json<'a, T: Deserialize<'a>>(s: &'a str, what: &str) -> Result<T, CliError> {
    serde_json::from_str(s).map_err(|e| {
        CliError::usage(format!(
            "malformed {what} JSON at line {} column {}: {e}",
            e.line(),
            e.column()
        ))
    })
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: String) -> Self {
        Self { code: 2, message }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        // mathematical findings are exit 1; operational problems are exit 2
        let code = match &e {
            Error::Improper(_) | Error::Ineligible(_) | Error::NotRepresentable(_) => 1,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

fn emit<T: Serialize>(common: &Common, payload: &Payload<T>) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(payload)
        .map_err(|e| CliError::usage(format!("serialization failed: {e}")))?;
    match &common.out {
        Some(path) => {
            std::fs::write(path, body.as_bytes())
                .map_err(|e| CliError::usage(format!("cannot write {path}: {e}")))?;
            let sidecar = Sidecar {
                written_at_unix_ms: std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_millis())
                    .unwrap_or(0),
                payload_path: path.clone(),
            };
            let meta = format!("{path}.meta.json");
            std::fs::write(&meta, serde_json::to_string_pretty(&sidecar).unwrap())
                .map_err(|e| CliError::usage(format!("cannot write {meta}: {e}")))?;
        }
        None => println!("{body}"),
    }
    Ok(())
}

fn parse_loss(s: &str) -> Result<CatalogId, CliError> {
    CatalogId::from_str(s).map_err(|e| CliError::usage(e.to_string()))
}

fn run_catalog(common: &Common, loss: &Option<String>, lp: &LossParams) -> Result<u8, CliError> {
    let params = lp.resolve();
    let rows = match loss {
        Some(id) => vec![loss_catalog::get(parse_loss(id)?, &params)?.summary()],
        None => loss_catalog::list(&params)?,
    };
    let hash = config_hash(
        "catalog",
        &[
            &loss.clone().unwrap_or_default(),
            &serde_json::to_string(lp).unwrap(),
        ],
    );
    emit(
        common,
        &Payload { command: "catalog", config_hash: hash, seed: common.seed, pass: true, result: rows },
    )?;
    Ok(0)
}

fn run_check_proper(common: &Common, loss: &str, lp: &LossParams) -> Result<u8, CliError> {
    let params = lp.resolve();
    let entry = loss_catalog::get(parse_loss(loss)?, &params)?;
    let resolution = common.resolution.unwrap_or(20);
    let tol = common.tol.unwrap_or(1e-9);
    let target = if params.n == 2 { entry.binary.to_multiclass() } else { entry.multiclass.clone() };
    let cert = check_proper(&target, resolution, tol)?;
    let pass = cert.passed();
    let hash = config_hash(
        "check-proper",
        &[loss, &serde_json::to_string(lp).unwrap(), &resolution.to_string(), &tol.to_string()],
    );
    emit(
        common,
        &Payload { command: "check-proper", config_hash: hash, seed: common.seed, pass, result: cert },
    )?;
    Ok(if pass { 0 } else { 1 })
}

#[derive(Serialize)]
struct BuildReport {
    loss_id: String,
    symmetric: bool,
    certificate: ProperCertificate,
    /// (p, l0(p), l1(p)) samples on a fixed grid.
    samples: Vec<(f64, f64, f64)>,
}

fn loss_report(
    loss: &properpo::proper_loss::BinaryLoss,
    resolution: usize,
    tol: f64,
) -> Result<BuildReport, CliError> {
    let cert = check_proper(&loss.to_multiclass(), resolution, tol)?;
    let samples = (1..20)
        .map(|k| {
            let p = k as f64 / 20.0;
            (p, loss.l0.eval(p), loss.l1.eval(p))
        })
        .collect();
    Ok(BuildReport {
        loss_id: loss.id.clone(),
        symmetric: loss.symmetric,
        certificate: cert,
        samples,
    })
}

fn run_phipo_build(
    common: &Common,
    potential: &Option<String>,
    symmetrize: bool,
) -> Result<u8, CliError> {
    let (spec, hash_part) = match (&common.config, potential) {
        (Some(_), _) => {
            let text = read_config(common)?;
            let spec: FactorySpec = parse_json(&text, "factory spec")?;
            (spec, text)
        }
        (None, Some(name)) => {
            let spec = FactorySpec::PhiPo {
                potential: FnDescriptor { name: name.clone(), params: BTreeMap::new() },
                symmetrize,
            };
            (spec, format!("{name}:{symmetrize}"))
        }
        (None, None) => {
            return Err(CliError::usage("phipo-build needs --potential or --config".into()))
        }
    };
    let loss = build_from_spec(&spec)?;
    let report = loss_report(&loss, common.resolution.unwrap_or(20), common.tol.unwrap_or(1e-9))?;
    let pass = report.certificate.passed();
    let hash = config_hash("phipo-build", &[&hash_part]);
    emit(
        common,
        &Payload { command: "phipo-build", config_hash: hash, seed: common.seed, pass, result: report },
    )?;
    Ok(if pass { 0 } else { 1 })
}

fn run_composite_build(common: &Common) -> Result<u8, CliError> {
    let text = read_config(common)?;
    let spec: FactorySpec = parse_json(&text, "factory spec")?;
    if matches!(spec, FactorySpec::PhiPo { .. }) {
        return Err(CliError::usage(
            "composite-build expects a composite factory spec; use phipo-build".into(),
        ));
    }
    let loss = build_from_spec(&spec)?;
    let report = loss_report(&loss, common.resolution.unwrap_or(20), common.tol.unwrap_or(1e-7))?;
    let pass = report.certificate.passed();
    let hash = config_hash("composite-build", &[&text]);
    emit(
        common,
        &Payload {
            command: "composite-build",
            config_hash: hash,
            seed: common.seed,
            pass,
            result: report,
        },
    )?;
    Ok(if pass { 0 } else { 1 })
}

fn run_klst_verify(
    common: &Common,
    table: &Option<String>,
    alpha_mono: Option<f64>,
) -> Result<u8, CliError> {
    let path = table
        .clone()
        .or_else(|| common.config.clone())
        .ok_or_else(|| CliError::usage("klst-verify needs --table or --config".into()))?;
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::usage(format!("cannot read table {path}: {e}")))?;
    // surface line/column for malformed JSON before structural validation
    let _: serde_json::Value = parse_json(&text, "choice table")?;
    let table = ChoiceTable::from_json(&text)?;
    let cert = verify_klst(
        &table,
        &LCS_ALPHA_SAMPLE,
        alpha_mono.unwrap_or(DEFAULT_ALPHA_MONO),
        common.tol.unwrap_or(DEFAULT_TOL),
    )?;
    let pass = cert.pass;
    let hash = config_hash("klst-verify", &[&text, &alpha_mono.unwrap_or(DEFAULT_ALPHA_MONO).to_string()]);
    emit(
        common,
        &Payload { command: "klst-verify", config_hash: hash, seed: common.seed, pass, result: cert },
    )?;
    Ok(if pass { 0 } else { 1 })
}

#[derive(Deserialize)]
struct Step1Config {
    /// "neg_entropy" | "itakura_saito" | "squared_euclidean"
    potential: String,
    rewards: Vec<f64>,
    reference: Vec<f64>,
}

#[derive(Serialize)]
struct Step1Report {
    solution: Vec<f64>,
    recovered_reward_diffs: Vec<Vec<f64>>,
}

fn vector_potential(name: &str) -> Result<VectorPotential, CliError> {
    match name {
        "neg_entropy" => Ok(VectorPotential::neg_entropy()),
        "itakura_saito" => Ok(VectorPotential::itakura_saito()),
        "squared_euclidean" => Ok(VectorPotential::squared_euclidean()),
        other => Err(CliError::usage(format!("unknown potential: {other}"))),
    }
}

fn run_solve_step1(common: &Common) -> Result<u8, CliError> {
    let text = read_config(common)?;
    let cfg: Step1Config = parse_json(&text, "step-1 config")?;
    let pot = vector_potential(&cfg.potential)?;
    let pi_ref = ProbVector::new(cfg.reference.clone())?;
    let pi = solve_step1(&cfg.rewards, &pi_ref, &pot)?;
    let diffs = recover_reward_diffs(&pi, &pi_ref, &pot)?;
    let hash = config_hash("solve-step1", &[&text]);
    emit(
        common,
        &Payload {
            command: "solve-step1",
            config_hash: hash,
            seed: common.seed,
            pass: true,
            result: Step1Report {
                solution: pi.entries().to_vec(),
                recovered_reward_diffs: diffs,
            },
        },
    )?;
    Ok(0)
}

#[derive(Deserialize)]
struct LennormConfig {
    /// "none" | "kl_geometric" | "is_harmonic"
    mode: String,
    factors: Vec<f64>,
}

#[derive(Serialize)]
struct LennormReport {
    value: f64,
    alpha: Option<f64>,
}

fn run_lennorm(common: &Common) -> Result<u8, CliError> {
    let text = read_config(common)?;
    let cfg: LennormConfig = parse_json(&text, "lennorm config")?;
    let mode = match cfg.mode.as_str() {
        "none" => LengthNorm::None,
        "kl_geometric" => LengthNorm::KlGeometric,
        "is_harmonic" => LengthNorm::IsHarmonic,
        other => return Err(CliError::usage(format!("unknown lennorm mode: {other}"))),
    };
    let out = length_normalize(&cfg.factors, mode)?;
    let hash = config_hash("lennorm", &[&text]);
    emit(
        common,
        &Payload {
            command: "lennorm",
            config_hash: hash,
            seed: common.seed,
            pass: true,
            result: LennormReport { value: out.value, alpha: out.alpha },
        },
    )?;
    Ok(0)
}

#[derive(Deserialize)]
struct TrainConfig {
    pipeline: PipelineConfig,
    rewards: Vec<Vec<f64>>,
    #[serde(default = "default_samples")]
    n_samples: usize,
    #[serde(default = "default_steps")]
    steps: usize,
    #[serde(default = "default_lr")]
    lr: f64,
    /// "sampled" (default) or "expected".
    #[serde(default)]
    mode: Option<String>,
}

fn default_samples() -> usize {
    2000
}
fn default_steps() -> usize {
    200
}
fn default_lr() -> f64 {
    0.5
}

#[derive(Serialize)]
struct TrainReport {
    metrics: properpo::trainer::Metrics,
    n_triples: usize,
    abstentions: usize,
    final_objective: f64,
    steps: usize,
}

fn run_train(common: &Common, trace_path: &Option<String>) -> Result<u8, CliError> {
    let text = read_config(common)?;
    let cfg: TrainConfig = parse_json(&text, "train config")?;
    let n = cfg.rewards.first().map(|r| r.len()).unwrap_or(0);
    let pipe = cfg.pipeline.build(n)?;
    let mode = match cfg.mode.as_deref() {
        None | Some("sampled") => DataMode::Sampled,
        Some("expected") => DataMode::Expected,
        Some(other) => return Err(CliError::usage(format!("unknown train mode: {other}"))),
    };
    let task = generate(&cfg.rewards, &ScalarFn::sigmoid(), cfg.n_samples, common.seed)?;
    let (policy, trace) = train(&pipe, &task, cfg.steps, cfg.lr, mode)?;
    let metrics = evaluate(&pipe, &policy, &task, mode)?;
    if let Some(path) = trace_path {
        std::fs::write(path, trace_to_csv(&trace))
            .map_err(|e| CliError::usage(format!("cannot write {path}: {e}")))?;
    }
    let hash = config_hash("train", &[&text]);
    let report = TrainReport {
        metrics,
        n_triples: task.dataset.len(),
        abstentions: task.abstentions,
        final_objective: trace.last().map(|r| r.objective).unwrap_or(f64::NAN),
        steps: cfg.steps,
    };
    emit(
        common,
        &Payload { command: "train", config_hash: hash, seed: common.seed, pass: true, result: report },
    )?;
    Ok(0)
}

fn dispatch(cli: &Cli) -> Result<u8, CliError> {
    match &cli.command {
        Command::Catalog { common, loss, params } => run_catalog(common, loss, params),
        Command::CheckProper { common, loss, params } => run_check_proper(common, loss, params),
        Command::PhipoBuild { common, potential, symmetrize } => {
            run_phipo_build(common, potential, *symmetrize)
        }
        Command::CompositeBuild { common } => run_composite_build(common),
        Command::KlstVerify { common, table, alpha_mono } => {
            run_klst_verify(common, table, *alpha_mono)
        }
        Command::SolveStep1 { common } => run_solve_step1(common),
        Command::Lennorm { common } => run_lennorm(common),
        Command::Train { common, trace } => run_train(common, trace),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version with success exits
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(2);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
