//! `chainplace`: train, evaluate, and compare chain placement engines.
//!
//! Exit codes: 0 success, 1 usage error, 2 internal failure, 3 oracle
//! mismatch.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chainplace_core::domain::generate_request;
use chainplace_core::harness::{
    self, Algorithm, CompareConfig, ExperimentSpec, ResultRow,
};
use chainplace_core::solvers::{branch_and_bound, first_fit, SolveResult};
use chainplace_core::trainer::{
    load_checkpoint, save_checkpoint, train_schedule_from, Checkpoint, CurriculumPhase,
    RewardConfig, TrainConfig, TrainMetrics,
};
use chainplace_core::uncertainty::OcTrainConfig;
use chainplace_core::{RealizedDemand, Scenario, UncertaintyMode};

#[derive(Parser)]
#[command(
    name = "chainplace",
    about = "Energy-aware placement of AI-model service chains under demand uncertainty",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the placement policy and write a checkpoint.
    Train(TrainArgs),
    /// Run one algorithm over a request batch and append a results row.
    Evaluate(EvaluateArgs),
    /// Run an algorithm/length grid with paired request streams.
    Compare(CompareArgs),
    /// Solve one chain with a baseline solver.
    Solve(SolveArgs),
    /// Cross-check the exact solver and evaluator against brute force.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Scenario file path or bundled name (hosts10, hosts20, tiny4).
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 12)]
    chain_length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.01)]
    entropy_coeff: f64,
    /// Train the uncertainty-blind variant (fuzzy layer disabled).
    #[arg(long)]
    no_fuzzy: bool,
    /// Append per-epoch metrics to this CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Print a progress line every N epochs (0 silences progress).
    #[arg(long, default_value_t = 100)]
    log_every: usize,
    /// Chain-length curriculum as LEN:EPOCHS[,LEN:EPOCHS...]; overrides
    /// --chain-length/--epochs when given. A LEN of the form MIN-MAX
    /// samples each episode's length from the range.
    #[arg(long)]
    schedule: Option<String>,
    /// Clip the global gradient norm to this value.
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Continue training from an existing checkpoint instead of a fresh
    /// initialization.
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scenario: String,
    /// One of s2s, s2s_nofuzzy, ff, bnb.
    #[arg(long)]
    algo: Algorithm,
    #[arg(long)]
    requests: usize,
    #[arg(long)]
    chain_length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Policy checkpoint; required for the neural algorithms.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Results CSV to append to.
    #[arg(long)]
    out: PathBuf,
    /// Record wall-clock solve times in the CSV (off keeps runs
    /// byte-identical).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    bnb_node_limit: Option<u64>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    scenario: String,
    /// Comma-separated algorithms, e.g. s2s,s2s_nofuzzy,ff,bnb.
    #[arg(long, value_delimiter = ',')]
    algos: Vec<Algorithm>,
    /// Comma-separated chain lengths, e.g. 12,14,16,18.
    #[arg(long, value_delimiter = ',')]
    lengths: Vec<usize>,
    #[arg(long)]
    requests: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for results.csv and plot_accept_ratio.csv.
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint for the fuzzy policy (required when s2s is listed).
    #[arg(long)]
    checkpoint_s2s: Option<PathBuf>,
    /// Checkpoint for the uncertainty-blind policy (required when
    /// s2s_nofuzzy is listed).
    #[arg(long)]
    checkpoint_nofuzzy: Option<PathBuf>,
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    bnb_node_limit: Option<u64>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    scenario: String,
    /// Chain as comma-separated catalog indices ("0,3,7") or "random:LEN".
    #[arg(long)]
    chain: String,
    /// ff or bnb.
    #[arg(long)]
    algo: Algorithm,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Results CSV to append to.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    bnb_node_limit: Option<u64>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Deliberately corrupt the search bound; the check must then fail.
    #[arg(long, hide = true)]
    corrupt_bound: bool,
}

#[derive(serde::Serialize)]
struct SolveRow {
    algorithm: String,
    chain: String,
    status: String,
    objective: Option<f64>,
    placement: Option<String>,
    nodes_explored: u64,
    wall_time_ms: Option<f64>,
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help and version requests are successes, everything else is a
            // usage error
            use clap::error::ErrorKind;
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            let mut cause = err.source();
            while let Some(inner) = cause {
                eprintln!("  caused by: {inner}");
                cause = inner.source();
            }
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Solve(args) => cmd_solve(args),
        Command::OracleCheck(args) => cmd_oracle(args),
    }
}

fn usage_error(message: String) -> Result<ExitCode, Box<dyn std::error::Error>> {
    eprintln!("usage error: {message}");
    Ok(ExitCode::from(1))
}

fn parse_schedule(spec: &str) -> Result<Vec<CurriculumPhase>, String> {
    spec.split(',')
        .map(|tok| {
            let (len, epochs) = tok
                .split_once(':')
                .ok_or_else(|| format!("schedule entry {tok:?} is not LEN[-LEN]:EPOCHS"))?;
            let epochs: usize =
                epochs.trim().parse().map_err(|_| format!("bad epochs in {tok:?}"))?;
            let (lo, hi) = match len.split_once('-') {
                Some((lo, hi)) => (
                    lo.trim().parse().map_err(|_| format!("bad length in {tok:?}"))?,
                    hi.trim().parse().map_err(|_| format!("bad length in {tok:?}"))?,
                ),
                None => {
                    let v: usize =
                        len.trim().parse().map_err(|_| format!("bad length in {tok:?}"))?;
                    (v, v)
                }
            };
            if lo == 0 || hi < lo || epochs == 0 {
                return Err(format!("schedule entry {tok:?} must be positive with lo <= hi"));
            }
            Ok(CurriculumPhase::range(lo, hi, epochs))
        })
        .collect()
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    if args.epochs == 0 || args.batch_size == 0 || args.chain_length == 0 {
        return usage_error("epochs, batch size, and chain length must be positive".into());
    }
    let phases = match &args.schedule {
        Some(spec) => match parse_schedule(spec) {
            Ok(phases) => phases,
            Err(msg) => return usage_error(msg),
        },
        None => vec![CurriculumPhase::fixed(args.chain_length, args.epochs)],
    };
    let target_length = phases.last().expect("nonempty").max_length;
    let scenario: Scenario = harness::resolve_scenario(&args.scenario)?;
    let uncertainty =
        if args.no_fuzzy { UncertaintyMode::Unit } else { UncertaintyMode::Fuzzy };
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        entropy_coeff: args.entropy_coeff,
        chain_length: target_length,
        seed: args.seed,
        uncertainty,
        grad_clip_norm: args.grad_clip,
        oc: OcTrainConfig { chain_length: target_length, ..Default::default() },
        ..Default::default()
    };
    let reward_cfg = RewardConfig::for_scenario(&scenario);

    let mut metrics_writer = match &args.metrics {
        Some(path) => Some(metrics_csv_writer(path)?),
        None => None,
    };
    let (warm_start, prior_steps) = match &args.init_checkpoint {
        Some(path) => {
            let ckpt: Checkpoint = load_checkpoint(path)?;
            if !ckpt.fingerprint_matches(&scenario) {
                eprintln!(
                    "warning: init checkpoint {} was trained against a different scenario",
                    path.display()
                );
            }
            (Some(ckpt.params), ckpt.train_steps)
        }
        None => (None, 0),
    };
    let log_every = args.log_every;
    let (policy, history) =
        train_schedule_from(&scenario, &cfg, &phases, &reward_cfg, warm_start, |m: &TrainMetrics| {
        if log_every > 0 && (m.epoch + 1) % log_every == 0 {
            eprintln!(
                "epoch {:>6}  mean_reward {:+.4}  accept {:.3}  policy_loss {:+.5}  value_loss {:.5}",
                m.epoch, m.mean_reward, m.accept_fraction, m.policy_loss, m.value_loss
            );
        }
        if let Some(writer) = &mut metrics_writer {
            write_metrics_row(writer, m).expect("metrics csv write");
        }
    })?;
    if let Some(writer) = &mut metrics_writer {
        writer.flush()?;
    }

    let checkpoint =
        Checkpoint::new(policy, &scenario, prior_steps + history.len() as u64, uncertainty);
    save_checkpoint(&checkpoint, &args.out)?;
    let last = history.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} ({} mode); final accept fraction {:.3}; checkpoint {}",
        history.len(),
        args.scenario,
        match uncertainty {
            UncertaintyMode::Fuzzy => "fuzzy",
            UncertaintyMode::Unit => "no-fuzzy",
        },
        last.accept_fraction,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn metrics_csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, std::io::Error> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        writer
            .write_record(["epoch", "mean_reward", "accept_fraction", "policy_loss", "value_loss"])
            .map_err(std::io::Error::other)?;
    }
    Ok(writer)
}

fn write_metrics_row(
    writer: &mut csv::Writer<std::fs::File>,
    m: &TrainMetrics,
) -> Result<(), csv::Error> {
    writer.write_record([
        m.epoch.to_string(),
        format!("{}", m.mean_reward),
        format!("{}", m.accept_fraction),
        format!("{}", m.policy_loss),
        format!("{}", m.value_loss),
    ])
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    if args.requests == 0 || args.chain_length == 0 {
        return usage_error("requests and chain length must be positive".into());
    }
    if args.algo.is_neural() != args.checkpoint.is_some() {
        return usage_error(format!(
            "--checkpoint is required for neural algorithms and invalid otherwise (algo {})",
            args.algo
        ));
    }
    let spec = ExperimentSpec {
        scenario: args.scenario,
        algorithm: args.algo,
        n_requests: args.requests,
        chain_length: args.chain_length,
        seed: args.seed,
        checkpoint: args.checkpoint,
        output: args.out,
        include_timing: args.timing,
        bnb_node_limit: args.bnb_node_limit,
    };
    let row = harness::run_experiment(&spec)?;
    print_row(&row);
    Ok(ExitCode::SUCCESS)
}

fn print_row(row: &ResultRow) {
    println!(
        "{} hosts={} len={} requests={} accepted={} ratio={:.4} mean_energy={}",
        row.algorithm,
        row.n_hosts,
        row.chain_length,
        row.n_requests,
        row.accepted,
        row.accept_ratio,
        row.mean_energy.map_or("n/a".to_string(), |e| format!("{e:.1}W")),
    );
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    if args.algos.is_empty() || args.lengths.is_empty() || args.requests == 0 {
        return usage_error("compare needs --algos, --lengths, and positive --requests".into());
    }
    let mut checkpoints = BTreeMap::new();
    if args.algos.contains(&Algorithm::S2s) {
        match &args.checkpoint_s2s {
            Some(p) => {
                checkpoints.insert(Algorithm::S2s, p.clone());
            }
            None => return usage_error("s2s listed but --checkpoint-s2s missing".into()),
        }
    }
    if args.algos.contains(&Algorithm::S2sNofuzzy) {
        match &args.checkpoint_nofuzzy {
            Some(p) => {
                checkpoints.insert(Algorithm::S2sNofuzzy, p.clone());
            }
            None => {
                return usage_error("s2s_nofuzzy listed but --checkpoint-nofuzzy missing".into())
            }
        }
    }
    let cfg = CompareConfig {
        scenario: args.scenario,
        algorithms: args.algos,
        chain_lengths: args.lengths,
        n_requests: args.requests,
        seed: args.seed,
        checkpoints,
        out_dir: args.out.clone(),
        include_timing: args.timing,
        bnb_node_limit: args.bnb_node_limit,
    };
    let rows = harness::compare(&cfg)?;
    for row in &rows {
        print_row(row);
    }
    println!("wrote {} rows under {}", rows.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_chain_spec(
    spec: &str,
    scenario: &Scenario,
    seed: u64,
) -> Result<Vec<usize>, String> {
    if let Some(len) = spec.strip_prefix("random:") {
        let len: usize = len.parse().map_err(|_| format!("bad random length in {spec:?}"))?;
        if len == 0 {
            return Err("random chain length must be positive".into());
        }
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let chain = generate_request(scenario, len, &mut rng).map_err(|e| e.to_string())?;
        return Ok(chain.model_ids);
    }
    spec.split(',')
        .map(|tok| {
            let id: usize =
                tok.trim().parse().map_err(|_| format!("bad catalog index {tok:?}"))?;
            if id >= scenario.catalog.len() {
                return Err(format!(
                    "catalog index {id} out of range ({} models)",
                    scenario.catalog.len()
                ));
            }
            Ok(id)
        })
        .collect()
}

fn cmd_solve(args: SolveArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    if args.algo.is_neural() {
        return usage_error("solve supports ff and bnb only".into());
    }
    let scenario: Scenario = harness::resolve_scenario(&args.scenario)?;
    let model_ids = match parse_chain_spec(&args.chain, &scenario, args.seed) {
        Ok(ids) => ids,
        Err(msg) => return usage_error(msg),
    };
    let compute: f64 = model_ids.iter().map(|&i| scenario.catalog[i].compute_latency).sum();
    let chain = chainplace_core::ServiceChain {
        latency_budget: compute
            + model_ids.len() as f64 * scenario.latency_slack * scenario.mean_link_latency(),
        sla_completion: scenario.default_sla_completion,
        model_ids,
    };
    let planning = RealizedDemand::nominal(chain.len());
    let result: SolveResult = match args.algo {
        Algorithm::FirstFit => first_fit(&chain, &scenario, &planning)?,
        Algorithm::BranchAndBound => {
            branch_and_bound(&chain, &scenario, &planning, args.bnb_node_limit)?
        }
        _ => unreachable!("guarded above"),
    };

    let row = SolveRow {
        algorithm: args.algo.label().to_string(),
        chain: args.chain.clone(),
        status: format!("{:?}", result.status).to_lowercase(),
        objective: result.objective,
        placement: result
            .placement
            .as_ref()
            .map(|p| p.host_of.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(" ")),
        nodes_explored: result.nodes_explored,
        wall_time_ms: args.timing.then_some(result.wall_time_ms),
        seed: args.seed,
    };
    append_solve_row(&args.out, &row)?;
    println!(
        "{}: {} objective={} nodes={}",
        row.algorithm,
        row.status,
        row.objective.map_or("n/a".into(), |o| format!("{o:.1}W")),
        row.nodes_explored
    );
    Ok(ExitCode::SUCCESS)
}

fn append_solve_row(path: &Path, row: &SolveRow) -> Result<(), Box<dyn std::error::Error>> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    writer.serialize(row)?;
    writer.flush()?;
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let report = harness::oracle_check(args.trials, args.seed, args.corrupt_bound);
    if let Some(warning) = &report.warning {
        eprintln!("warning: {warning}");
    }
    for mismatch in &report.mismatches {
        eprintln!("mismatch: {mismatch}");
    }
    if report.passed() {
        println!("oracle check passed over {} trials", report.trials);
        Ok(ExitCode::SUCCESS)
    } else {
        println!(
            "oracle check FAILED: {} mismatches over {} trials",
            report.mismatches.len(),
            report.trials
        );
        Ok(ExitCode::from(3))
    }
}
