//! Experiment orchestration: run algorithms over request batches, judge each
//! proposed placement under a fresh realized draw, and emit result CSVs.
//!
//! Requests and judging draws come from per-request counter-mode streams, so
//! request `i` is bit-identical for every algorithm run with the same seed:
//! comparisons are paired by construction.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{generate_request, load_scenario, Placement, Scenario, ServiceChain};
use crate::evaluator::{acceptance_ratio, check_constraints, energy, ConstraintReport};
use crate::policy::{decode, DecodeMode, PolicyParameters, UncertaintyMode};
use crate::solvers::{branch_and_bound, first_fit, SolveStatus};
use crate::trainer::{load_checkpoint, Checkpoint};
use crate::uncertainty::draw_realization;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
    #[error(transparent)]
    Checkpoint(#[from] crate::trainer::CheckpointError),
    #[error(transparent)]
    Solver(#[from] crate::solvers::SolverError),
    #[error(transparent)]
    Eval(#[from] crate::evaluator::EvalError),
    #[error(transparent)]
    Uncertainty(#[from] crate::uncertainty::UncertaintyError),
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("scenario {0} is neither a readable file nor a bundled name")]
    UnknownScenario(String),
    #[error("csv io on {path}: {message}")]
    Csv { path: String, message: String },
}

/// Placement engines the harness can drive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    S2s,
    S2sNofuzzy,
    FirstFit,
    BranchAndBound,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::S2s => "s2s",
            Algorithm::S2sNofuzzy => "s2s_nofuzzy",
            Algorithm::FirstFit => "ff",
            Algorithm::BranchAndBound => "bnb",
        }
    }

    pub fn is_neural(self) -> bool {
        matches!(self, Algorithm::S2s | Algorithm::S2sNofuzzy)
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "s2s" => Ok(Algorithm::S2s),
            "s2s_nofuzzy" | "s2s-nofuzzy" => Ok(Algorithm::S2sNofuzzy),
            "ff" | "first_fit" => Ok(Algorithm::FirstFit),
            "bnb" | "branch_and_bound" => Ok(Algorithm::BranchAndBound),
            other => Err(format!("unknown algorithm {other:?} (want s2s, s2s_nofuzzy, ff, bnb)")),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Resolve a scenario argument: an existing file path first, then a bundled
/// name.
pub fn resolve_scenario<S: Scalar>(source: &str) -> Result<Scenario<S>, HarnessError> {
    if Path::new(source).is_file() {
        return Ok(load_scenario(source)?);
    }
    Scenario::builtin(source).ok_or_else(|| HarnessError::UnknownScenario(source.to_string()))
}

/// Request `i` of a run: deterministic, independent of the algorithm.
pub fn request_for<S: Scalar>(
    scenario: &Scenario<S>,
    chain_length: usize,
    seed: u64,
    index: u64,
) -> ServiceChain<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * index);
    generate_request(scenario, chain_length, &mut rng).expect("valid scenario and length")
}

/// The judging draw for request `i`: a separate stream so solver internals
/// can never perturb it.
pub fn judge_draw_for<S: Scalar>(
    scenario: &Scenario<S>,
    chain: &ServiceChain<S>,
    seed: u64,
    index: u64,
) -> crate::evaluator::RealizedDemand<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * index + 1);
    draw_realization(chain, scenario, &mut rng).expect("valid chain")
}

/// Node budget for branch-and-bound inside experiment runs; exhausted
/// searches fall back to their incumbent.
pub const DEFAULT_BNB_NODE_LIMIT: u64 = 200_000;

/// In-memory outcome of one (algorithm, chain_length) run.
#[derive(Clone, Debug)]
pub struct JudgedRun<S: Scalar = f64> {
    /// Reports for requests where the algorithm proposed a placement.
    pub reports: Vec<ConstraintReport<S>>,
    /// Requests with no proposed placement at all (solver infeasible).
    pub unplaced: usize,
    pub accepted: usize,
    pub n_requests: usize,
    pub mean_energy_feasible: Option<S>,
    pub mean_solve_time_ms: f64,
}

impl<S: Scalar> JudgedRun<S> {
    pub fn accept_ratio(&self) -> f64 {
        self.accepted as f64 / self.n_requests as f64
    }
}

/// Run one algorithm over a paired request batch and judge each proposal
/// under its realized draw.
pub fn judge_algorithm<S: Scalar>(
    scenario: &Scenario<S>,
    algorithm: Algorithm,
    policy: Option<&PolicyParameters<S>>,
    n_requests: usize,
    chain_length: usize,
    seed: u64,
    bnb_node_limit: Option<u64>,
) -> Result<JudgedRun<S>, HarnessError> {
    if algorithm.is_neural() && policy.is_none() {
        return Err(HarnessError::InvalidSpec(format!(
            "algorithm {algorithm} needs a policy checkpoint"
        )));
    }
    let mut reports = Vec::with_capacity(n_requests);
    let mut unplaced = 0usize;
    let mut accepted = 0usize;
    let mut energy_total = S::zero();
    let mut energy_count = 0usize;
    let mut solve_time_total = 0.0f64;

    for i in 0..n_requests {
        let chain = request_for(scenario, chain_length, seed, i as u64);
        let start = Instant::now();
        let placement: Option<Placement> = match algorithm {
            Algorithm::S2s | Algorithm::S2sNofuzzy => {
                let mode = if algorithm == Algorithm::S2s {
                    UncertaintyMode::Fuzzy
                } else {
                    UncertaintyMode::Unit
                };
                let mut unused_rng = ChaCha8Rng::seed_from_u64(0);
                let trace = decode(
                    &chain,
                    scenario,
                    policy.expect("validated above"),
                    mode,
                    DecodeMode::Greedy,
                    &mut unused_rng,
                );
                Some(trace.hosts)
            }
            Algorithm::FirstFit => {
                let nominal = crate::evaluator::RealizedDemand::nominal(chain.len());
                first_fit(&chain, scenario, &nominal)?.placement
            }
            Algorithm::BranchAndBound => {
                let nominal = crate::evaluator::RealizedDemand::nominal(chain.len());
                let limit = bnb_node_limit.or(Some(DEFAULT_BNB_NODE_LIMIT));
                let result = branch_and_bound(&chain, scenario, &nominal, limit)?;
                match result.status {
                    SolveStatus::Optimal | SolveStatus::Feasible => result.placement,
                    SolveStatus::Infeasible | SolveStatus::Timeout => None,
                }
            }
        };
        solve_time_total += start.elapsed().as_secs_f64() * 1e3;

        match placement {
            Some(placement) => {
                let realized = judge_draw_for(scenario, &chain, seed, i as u64);
                let report = check_constraints(&placement, &chain, &realized, scenario)?;
                if report.feasible {
                    accepted += 1;
                    energy_total =
                        energy_total + energy(&placement, &chain, &realized, scenario)?;
                    energy_count += 1;
                }
                reports.push(report);
            }
            None => unplaced += 1,
        }
    }

    Ok(JudgedRun {
        reports,
        unplaced,
        accepted,
        n_requests,
        mean_energy_feasible: (energy_count > 0)
            .then(|| energy_total / S::of(energy_count as f64)),
        mean_solve_time_ms: solve_time_total / n_requests as f64,
    })
}

/// One experiment cell.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    /// Path or bundled scenario name.
    pub scenario: String,
    pub algorithm: Algorithm,
    pub n_requests: usize,
    pub chain_length: usize,
    pub seed: u64,
    /// Required exactly when the algorithm is neural.
    pub checkpoint: Option<PathBuf>,
    pub output: PathBuf,
    /// Populate the wall-clock column (off keeps output byte-stable).
    pub include_timing: bool,
    pub bnb_node_limit: Option<u64>,
}

/// One CSV row of aggregated results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: String,
    pub n_hosts: usize,
    pub chain_length: usize,
    pub n_requests: usize,
    pub accepted: usize,
    pub accept_ratio: f64,
    pub mean_energy: Option<f64>,
    pub mean_solve_time_ms: Option<f64>,
    pub seed: u64,
}

fn validate_spec(spec: &ExperimentSpec) -> Result<(), HarnessError> {
    if spec.n_requests == 0 || spec.chain_length == 0 {
        return Err(HarnessError::InvalidSpec("counts must be positive".into()));
    }
    match (spec.algorithm.is_neural(), &spec.checkpoint) {
        (true, None) => Err(HarnessError::InvalidSpec(format!(
            "algorithm {} requires --checkpoint",
            spec.algorithm
        ))),
        (false, Some(_)) => Err(HarnessError::InvalidSpec(format!(
            "algorithm {} does not take a checkpoint",
            spec.algorithm
        ))),
        _ => Ok(()),
    }
}

fn load_policy_for<S: Scalar>(
    spec_checkpoint: &Path,
    scenario: &Scenario<S>,
) -> Result<PolicyParameters<S>, HarnessError> {
    let checkpoint: Checkpoint<S> = load_checkpoint(spec_checkpoint)?;
    if !checkpoint.fingerprint_matches(scenario) {
        eprintln!(
            "warning: checkpoint {} was trained against a different scenario (fingerprint mismatch)",
            spec_checkpoint.display()
        );
    }
    Ok(checkpoint.params)
}

fn run_to_row<S: Scalar>(
    scenario: &Scenario<S>,
    algorithm: Algorithm,
    run: &JudgedRun<S>,
    chain_length: usize,
    seed: u64,
    include_timing: bool,
) -> ResultRow {
    ResultRow {
        algorithm: algorithm.label().to_string(),
        n_hosts: scenario.n_hosts(),
        chain_length,
        n_requests: run.n_requests,
        accepted: run.accepted,
        accept_ratio: run.accept_ratio(),
        mean_energy: run.mean_energy_feasible.map(|e| e.to_f64_lossy()),
        mean_solve_time_ms: include_timing.then_some(run.mean_solve_time_ms),
        seed,
    }
}

/// Run one experiment cell and append its row to the output CSV.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultRow, HarnessError> {
    validate_spec(spec)?;
    let scenario: Scenario<f64> = resolve_scenario(&spec.scenario)?;
    let policy = match &spec.checkpoint {
        Some(path) => Some(load_policy_for(path, &scenario)?),
        None => None,
    };
    let run = judge_algorithm(
        &scenario,
        spec.algorithm,
        policy.as_ref(),
        spec.n_requests,
        spec.chain_length,
        spec.seed,
        spec.bnb_node_limit,
    )?;
    let row = run_to_row(
        &scenario,
        spec.algorithm,
        &run,
        spec.chain_length,
        spec.seed,
        spec.include_timing,
    );
    append_result_rows(&spec.output, std::slice::from_ref(&row))?;
    Ok(row)
}

/// Append rows to a CSV, writing the header only for a fresh file.
pub fn append_result_rows(path: &Path, rows: &[ResultRow]) -> Result<(), HarnessError> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| HarnessError::Csv { path: path.display().to_string(), message: e.to_string() })?;
    let mut writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| HarnessError::Csv { path: path.display().to_string(), message: e.to_string() })?;
    }
    writer
        .flush()
        .map_err(|e| HarnessError::Csv { path: path.display().to_string(), message: e.to_string() })?;
    Ok(())
}

/// Parse a results CSV back into rows.
pub fn read_result_rows(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| HarnessError::Csv { path: path.display().to_string(), message: e.to_string() })?;
    reader
        .deserialize()
        .collect::<Result<Vec<ResultRow>, _>>()
        .map_err(|e| HarnessError::Csv { path: path.display().to_string(), message: e.to_string() })
}

/// A comparison grid over algorithms and chain lengths with shared request
/// streams.
#[derive(Clone, Debug)]
pub struct CompareConfig {
    pub scenario: String,
    pub algorithms: Vec<Algorithm>,
    pub chain_lengths: Vec<usize>,
    pub n_requests: usize,
    pub seed: u64,
    pub checkpoints: BTreeMap<Algorithm, PathBuf>,
    pub out_dir: PathBuf,
    pub include_timing: bool,
    pub bnb_node_limit: Option<u64>,
}

/// Run the grid; emits `results.csv` (long form) and
/// `plot_accept_ratio.csv` (chain length by algorithm) in `out_dir`.
pub fn compare(cfg: &CompareConfig) -> Result<Vec<ResultRow>, HarnessError> {
    if cfg.algorithms.is_empty() || cfg.chain_lengths.is_empty() {
        return Err(HarnessError::InvalidSpec("compare needs algorithms and lengths".into()));
    }
    let scenario: Scenario<f64> = resolve_scenario(&cfg.scenario)?;
    let mut policies: BTreeMap<Algorithm, PolicyParameters<f64>> = BTreeMap::new();
    for &algo in &cfg.algorithms {
        if algo.is_neural() {
            let path = cfg.checkpoints.get(&algo).ok_or_else(|| {
                HarnessError::InvalidSpec(format!("algorithm {algo} requires a checkpoint"))
            })?;
            policies.insert(algo, load_policy_for(path, &scenario)?);
        }
    }

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| HarnessError::Csv {
        path: cfg.out_dir.display().to_string(),
        message: e.to_string(),
    })?;
    let mut rows = Vec::new();
    for &chain_length in &cfg.chain_lengths {
        for &algo in &cfg.algorithms {
            let run = judge_algorithm(
                &scenario,
                algo,
                policies.get(&algo),
                cfg.n_requests,
                chain_length,
                cfg.seed,
                cfg.bnb_node_limit,
            )?;
            rows.push(run_to_row(&scenario, algo, &run, chain_length, cfg.seed, cfg.include_timing));
        }
    }

    let results_path = cfg.out_dir.join("results.csv");
    append_result_rows(&results_path, &rows)?;

    // wide plot data: one row per chain length, one column per algorithm
    let plot_path = cfg.out_dir.join("plot_accept_ratio.csv");
    let mut writer = csv::Writer::from_path(&plot_path).map_err(|e| HarnessError::Csv {
        path: plot_path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut header = vec!["chain_length".to_string()];
    header.extend(cfg.algorithms.iter().map(|a| a.label().to_string()));
    writer.write_record(&header).map_err(|e| HarnessError::Csv {
        path: plot_path.display().to_string(),
        message: e.to_string(),
    })?;
    for &chain_length in &cfg.chain_lengths {
        let mut record = vec![chain_length.to_string()];
        for &algo in &cfg.algorithms {
            let row = rows
                .iter()
                .find(|r| r.chain_length == chain_length && r.algorithm == algo.label())
                .expect("row exists");
            record.push(format!("{}", row.accept_ratio));
        }
        writer.write_record(&record).map_err(|e| HarnessError::Csv {
            path: plot_path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    writer.flush().map_err(|e| HarnessError::Csv {
        path: plot_path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(rows)
}

/// Straight-line re-evaluations of the objective and constraint families,
/// written directly from the formulas and kept independent of the evaluator
/// module. Used by the oracle-check suites.
pub mod reference {
    use crate::domain::{Placement, Scenario, ServiceChain};
    use crate::evaluator::RealizedDemand;
    use crate::Scalar;

    pub fn energy_direct<S: Scalar>(
        placement: &Placement,
        chain: &ServiceChain<S>,
        realized: &RealizedDemand<S>,
        scenario: &Scenario<S>,
    ) -> S {
        let mut total = S::zero();
        for h in 0..scenario.hosts.len() {
            let mut active = false;
            for (k, &host) in placement.host_of.iter().enumerate() {
                if host != h {
                    continue;
                }
                active = true;
                let m = &scenario.catalog[chain.model_ids[k]];
                total = total
                    + scenario.hosts[h].cpu_unit_power * m.nominal_cpu * realized.factors[k].f_cpu
                    + scenario.hosts[h].gpu_unit_power * m.nominal_gpu * realized.factors[k].f_gpu;
            }
            if active {
                total = total + scenario.hosts[h].idle_power;
            }
        }
        // each cross-host hop puts the upstream bandwidth on two links
        for k in 1..placement.host_of.len() {
            if placement.host_of[k] != placement.host_of[k - 1] {
                let bw = scenario.catalog[chain.model_ids[k - 1]].bandwidth_demand;
                total = total + scenario.net_unit_power * (bw + bw);
            }
        }
        total
    }

    /// Family order: cpu, gpu, bandwidth, latency, disk, sla.
    pub fn families_direct<S: Scalar>(
        placement: &Placement,
        chain: &ServiceChain<S>,
        realized: &RealizedDemand<S>,
        scenario: &Scenario<S>,
    ) -> [bool; 6] {
        let n = scenario.hosts.len();
        let mut ok = [true; 6];
        for h in 0..n {
            let mut cpu = S::zero();
            let mut gpu = S::zero();
            let mut disk = S::zero();
            for (k, &host) in placement.host_of.iter().enumerate() {
                if host == h {
                    let m = &scenario.catalog[chain.model_ids[k]];
                    cpu = cpu + m.nominal_cpu * realized.factors[k].f_cpu;
                    gpu = gpu + m.nominal_gpu * realized.factors[k].f_gpu;
                    disk = disk + m.nominal_disk * realized.factors[k].f_disk;
                }
            }
            ok[0] &= cpu <= scenario.hosts[h].cpu_capacity;
            ok[1] &= gpu <= scenario.hosts[h].gpu_capacity;
            ok[4] &= disk <= scenario.hosts[h].disk_capacity;

            let mut load = S::zero();
            for k in 1..placement.host_of.len() {
                let (a, b) = (placement.host_of[k - 1], placement.host_of[k]);
                if a != b && (a == h || b == h) {
                    load = load + scenario.catalog[chain.model_ids[k - 1]].bandwidth_demand;
                }
            }
            ok[2] &= load <= scenario.hosts[h].link_bandwidth;
        }

        let mut latency = S::zero();
        for &id in &chain.model_ids {
            latency = latency + scenario.catalog[id].compute_latency;
        }
        for k in 1..placement.host_of.len() {
            let (a, b) = (placement.host_of[k - 1], placement.host_of[k]);
            if a != b {
                latency =
                    latency + scenario.hosts[a].link_latency + scenario.hosts[b].link_latency;
            }
        }
        ok[3] = latency <= chain.latency_budget;

        let mut completion = S::zero();
        for (k, &id) in chain.model_ids.iter().enumerate() {
            completion = completion
                + scenario.catalog[id].nominal_completion_rate * realized.factors[k].f_completion;
        }
        ok[5] = completion / S::of(chain.model_ids.len() as f64) >= chain.sla_completion;
        ok
    }

    pub fn feasible_direct<S: Scalar>(
        placement: &Placement,
        chain: &ServiceChain<S>,
        realized: &RealizedDemand<S>,
        scenario: &Scenario<S>,
    ) -> bool {
        families_direct(placement, chain, realized, scenario).iter().all(|&x| x)
    }
}

/// Oracle-check outcome.
#[derive(Clone, Debug)]
pub struct OracleReport {
    pub trials: usize,
    pub mismatches: Vec<String>,
    pub warning: Option<String>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Run the solver oracle-equality and evaluator agreement suites on the
/// bundled tiny scenario. `corrupt_bound` inflates the branch-and-bound
/// lower bound, which must make the check fail.
pub fn oracle_check(trials: usize, seed: u64, corrupt_bound: bool) -> OracleReport {
    use crate::evaluator::ALL_FAMILIES;
    use crate::solvers::{brute_force, BnbOptions};
    use rand::Rng;

    if trials == 0 {
        return OracleReport {
            trials: 0,
            mismatches: Vec::new(),
            warning: Some("zero trials requested: vacuous pass".into()),
        };
    }
    let scenario: Scenario<f64> = Scenario::builtin("tiny4").expect("bundled");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = Vec::new();

    for trial in 0..trials {
        let m = rng.random_range(1..=6usize);
        let mut chain = generate_request(&scenario, m, &mut rng).expect("valid");
        if trial % 3 == 0 {
            chain.latency_budget *= 0.4;
        }
        let planning = if trial % 2 == 0 {
            crate::evaluator::RealizedDemand::nominal(m)
        } else {
            draw_realization(&chain, &scenario, &mut rng).expect("valid")
        };

        // solver oracle equality
        let exact = brute_force(&chain, &scenario, &planning).expect("within size cap");
        let options = BnbOptions {
            bound_inflation: if corrupt_bound { 1.5 } else { 1.0 },
            ..Default::default()
        };
        let bnb = crate::solvers::branch_and_bound_with(&chain, &scenario, &planning, options)
            .expect("factors match");
        if exact.status != bnb.status || exact.objective != bnb.objective {
            mismatches.push(format!(
                "trial {trial}: solver mismatch: enumeration {:?}/{:?} vs search {:?}/{:?}",
                exact.status, exact.objective, bnb.status, bnb.objective
            ));
        }

        // evaluator agreement on random placements
        for _ in 0..5 {
            let placement = Placement::new(
                (0..m).map(|_| rng.random_range(0..scenario.n_hosts())).collect(),
            );
            let report = check_constraints(&placement, &chain, &planning, &scenario)
                .expect("index-valid");
            let direct = reference::families_direct(&placement, &chain, &planning, &scenario);
            for (slot, fam) in ALL_FAMILIES.iter().enumerate() {
                let evaluator_ok = !report.violated.contains(fam);
                if evaluator_ok != direct[slot] {
                    mismatches.push(format!(
                        "trial {trial}: family {fam:?} disagrees on {:?}",
                        placement.host_of
                    ));
                }
            }
            let e = energy(&placement, &chain, &planning, &scenario).expect("index-valid");
            let direct_e = reference::energy_direct(&placement, &chain, &planning, &scenario);
            if (e - direct_e).abs() > 1e-9 {
                mismatches.push(format!(
                    "trial {trial}: energy {e} vs direct {direct_e} on {:?}",
                    placement.host_of
                ));
            }
        }
    }
    OracleReport { trials, mismatches, warning: None }
}

/// The acceptance-ratio arithmetic shared with the evaluator, on the judged
/// reports of a run (requests with no proposal count as rejections).
pub fn run_accept_ratio<S: Scalar>(run: &JudgedRun<S>) -> f64 {
    if run.reports.is_empty() {
        return 0.0;
    }
    let judged = acceptance_ratio(&run.reports).expect("nonempty");
    judged * run.reports.len() as f64 / run.n_requests as f64
}
