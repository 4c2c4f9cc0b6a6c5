//! Non-neural baselines: First Fit, exact branch-and-bound, and a
//! brute-force enumerator used as the correctness oracle.
//!
//! Baselines plan on the factors they are given (all-ones for nominal
//! planning); the harness judges their placements against realized draws.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Placement, Scenario, ServiceChain};
use crate::evaluator::{check_constraints, energy, ConstraintFamily, ConstraintReport, RealizedDemand};
use crate::Scalar;

/// Planning feasibility: every placement-dependent family holds. The sla
/// family is a function of the chain and the realized draw alone, so no
/// placement decision can influence it; solvers leave it to the judge.
pub fn planning_feasible<S: Scalar>(report: &ConstraintReport<S>) -> bool {
    report.violated.iter().all(|f| *f == ConstraintFamily::Sla)
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("instance too large: {combinations:.3e} placements exceed the {limit:.0e} cap")]
    InstanceTooLarge { combinations: f64, limit: f64 },
    #[error("planning factors length {factors} does not match chain length {chain}")]
    FactorLengthMismatch { factors: usize, chain: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    Timeout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult<S: Scalar = f64> {
    pub placement: Option<Placement>,
    pub objective: Option<S>,
    pub status: SolveStatus,
    pub nodes_explored: u64,
    pub wall_time_ms: f64,
}

impl<S: Scalar> SolveResult<S> {
    fn infeasible(nodes: u64, start: Instant) -> Self {
        SolveResult {
            placement: None,
            objective: None,
            status: SolveStatus::Infeasible,
            nodes_explored: nodes,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        }
    }
}

fn check_factors<S: Scalar>(
    chain: &ServiceChain<S>,
    factors: &RealizedDemand<S>,
) -> Result<(), SolverError> {
    if factors.len() != chain.len() {
        return Err(SolverError::FactorLengthMismatch { factors: factors.len(), chain: chain.len() });
    }
    Ok(())
}

/// Scan chain positions in order; each model goes to the lowest-index host
/// whose cumulative cpu/gpu/disk under the planning factors still fit. The
/// full assignment is then validated against every constraint family.
pub fn first_fit<S: Scalar>(
    chain: &ServiceChain<S>,
    scenario: &Scenario<S>,
    planning: &RealizedDemand<S>,
) -> Result<SolveResult<S>, SolverError> {
    check_factors(chain, planning)?;
    let start = Instant::now();
    let n = scenario.n_hosts();
    let mut cpu: Vec<S> = scenario.hosts.iter().map(|h| h.cpu_capacity).collect();
    let mut gpu: Vec<S> = scenario.hosts.iter().map(|h| h.gpu_capacity).collect();
    let mut disk: Vec<S> = scenario.hosts.iter().map(|h| h.disk_capacity).collect();
    let mut probes = 0u64;
    let mut host_of = Vec::with_capacity(chain.len());
    for (k, &id) in chain.model_ids.iter().enumerate() {
        let profile = &scenario.catalog[id];
        let f = &planning.factors[k];
        let (need_cpu, need_gpu, need_disk) = (
            profile.nominal_cpu * f.f_cpu,
            profile.nominal_gpu * f.f_gpu,
            profile.nominal_disk * f.f_disk,
        );
        let mut placed = None;
        for host in 0..n {
            probes += 1;
            if cpu[host] >= need_cpu && gpu[host] >= need_gpu && disk[host] >= need_disk {
                placed = Some(host);
                break;
            }
        }
        match placed {
            Some(host) => {
                cpu[host] = cpu[host] - need_cpu;
                gpu[host] = gpu[host] - need_gpu;
                disk[host] = disk[host] - need_disk;
                host_of.push(host);
            }
            None => return Ok(SolveResult::infeasible(probes, start)),
        }
    }
    let placement = Placement::new(host_of);
    let report = check_constraints(&placement, chain, planning, scenario)
        .expect("assignment is index-valid");
    if !planning_feasible(&report) {
        return Ok(SolveResult::infeasible(probes, start));
    }
    let objective = energy(&placement, chain, planning, scenario).expect("index-valid");
    Ok(SolveResult {
        placement: Some(placement),
        objective: Some(objective),
        status: SolveStatus::Feasible,
        nodes_explored: probes,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Upper limit on placements the enumerator will visit.
pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

/// Enumerate every placement, judging each through the evaluator. Returns
/// the exact optimum with the lexicographically smallest placement among
/// energy ties.
pub fn brute_force<S: Scalar>(
    chain: &ServiceChain<S>,
    scenario: &Scenario<S>,
    planning: &RealizedDemand<S>,
) -> Result<SolveResult<S>, SolverError> {
    check_factors(chain, planning)?;
    let start = Instant::now();
    let n = scenario.n_hosts();
    let m = chain.len();
    let combinations = (n as f64).powi(m as i32);
    if combinations > BRUTE_FORCE_LIMIT {
        return Err(SolverError::InstanceTooLarge { combinations, limit: BRUTE_FORCE_LIMIT });
    }
    let mut assignment = vec![0usize; m];
    let mut best: Option<(S, Vec<usize>)> = None;
    let mut nodes = 0u64;
    loop {
        nodes += 1;
        let placement = Placement::new(assignment.clone());
        let report =
            check_constraints(&placement, chain, planning, scenario).expect("index-valid");
        if planning_feasible(&report) {
            let e = energy(&placement, chain, planning, scenario).expect("index-valid");
            // strict improvement keeps the lexicographically first optimum,
            // because enumeration order is lexicographic
            if best.as_ref().map_or(true, |(be, _)| e < *be) {
                best = Some((e, assignment.clone()));
            }
        }
        // odometer increment, most significant digit first
        let mut pos = m;
        while pos > 0 {
            pos -= 1;
            assignment[pos] += 1;
            if assignment[pos] < n {
                break;
            }
            assignment[pos] = 0;
            if pos == 0 {
                let wall = start.elapsed().as_secs_f64() * 1e3;
                return Ok(match best {
                    Some((objective, host_of)) => SolveResult {
                        placement: Some(Placement::new(host_of)),
                        objective: Some(objective),
                        status: SolveStatus::Optimal,
                        nodes_explored: nodes,
                        wall_time_ms: wall,
                    },
                    None => SolveResult {
                        placement: None,
                        objective: None,
                        status: SolveStatus::Infeasible,
                        nodes_explored: nodes,
                        wall_time_ms: wall,
                    },
                });
            }
        }
    }
}

/// Search controls. `prune: false` and `bound_inflation` above 1 exist for
/// the oracle-check suites: the first makes the search walk the full tree,
/// the second deliberately corrupts the lower bound.
#[derive(Clone, Copy, Debug)]
pub struct BnbOptions<S: Scalar = f64> {
    pub node_limit: Option<u64>,
    pub prune: bool,
    pub bound_inflation: S,
}

impl<S: Scalar> Default for BnbOptions<S> {
    fn default() -> Self {
        BnbOptions { node_limit: None, prune: true, bound_inflation: S::one() }
    }
}

/// Guard added to the incumbent before pruning on the lower bound, so that
/// summation-order noise can never prune a true optimum.
const PRUNE_GUARD_WATTS: f64 = 1e-6;

struct BnbSearch<'a, S: Scalar> {
    chain: &'a ServiceChain<S>,
    scenario: &'a Scenario<S>,
    planning: &'a RealizedDemand<S>,
    options: BnbOptions<S>,
    /// Minimum possible compute power of positions `k..m`.
    future_min_compute: Vec<S>,
    assignment: Vec<usize>,
    cpu: Vec<S>,
    gpu: Vec<S>,
    disk: Vec<S>,
    link_load: Vec<S>,
    models_on: Vec<u32>,
    latency_so_far: S,
    incumbent: Option<(S, Vec<usize>)>,
    nodes: u64,
    hit_limit: bool,
}

impl<'a, S: Scalar> BnbSearch<'a, S> {
    /// Incremental energy of placing position `k` on `host` given the
    /// current partial assignment: compute power, idle power if the host is
    /// newly activated, and network power for a cross-host hop.
    fn energy_delta(&self, k: usize, host: usize) -> S {
        let profile = &self.scenario.catalog[self.chain.model_ids[k]];
        let f = &self.planning.factors[k];
        let spec = &self.scenario.hosts[host];
        let mut delta = spec.cpu_unit_power * profile.nominal_cpu * f.f_cpu
            + spec.gpu_unit_power * profile.nominal_gpu * f.f_gpu;
        if self.models_on[host] == 0 {
            delta = delta + spec.idle_power;
        }
        if k > 0 {
            let prev = self.assignment[k - 1];
            if prev != host {
                let bw = self.scenario.catalog[self.chain.model_ids[k - 1]].bandwidth_demand;
                delta = delta + self.scenario.net_unit_power * (bw + bw);
            }
        }
        delta
    }

    /// Try to extend the partial assignment; `None` when the placement
    /// breaks cpu/gpu/disk/bandwidth/latency limits.
    fn try_place(&mut self, k: usize, host: usize) -> Option<()> {
        let profile = &self.scenario.catalog[self.chain.model_ids[k]];
        let f = &self.planning.factors[k];
        let (need_cpu, need_gpu, need_disk) = (
            profile.nominal_cpu * f.f_cpu,
            profile.nominal_gpu * f.f_gpu,
            profile.nominal_disk * f.f_disk,
        );
        if self.cpu[host] < need_cpu || self.gpu[host] < need_gpu || self.disk[host] < need_disk {
            return None;
        }
        let mut new_latency = self.latency_so_far;
        if k > 0 {
            let prev = self.assignment[k - 1];
            if prev != host {
                let bw = self.scenario.catalog[self.chain.model_ids[k - 1]].bandwidth_demand;
                if self.link_load[prev] + bw > self.scenario.hosts[prev].link_bandwidth
                    || self.link_load[host] + bw > self.scenario.hosts[host].link_bandwidth
                {
                    return None;
                }
                new_latency = new_latency
                    + self.scenario.hosts[prev].link_latency
                    + self.scenario.hosts[host].link_latency;
                if new_latency > self.chain.latency_budget {
                    return None;
                }
                self.link_load[prev] = self.link_load[prev] + bw;
                self.link_load[host] = self.link_load[host] + bw;
            }
        }
        self.cpu[host] = self.cpu[host] - need_cpu;
        self.gpu[host] = self.gpu[host] - need_gpu;
        self.disk[host] = self.disk[host] - need_disk;
        self.models_on[host] += 1;
        self.latency_so_far = new_latency;
        self.assignment[k] = host;
        Some(())
    }

    fn unplace(&mut self, k: usize, host: usize, latency_before: S) {
        let profile = &self.scenario.catalog[self.chain.model_ids[k]];
        let f = &self.planning.factors[k];
        self.cpu[host] = self.cpu[host] + profile.nominal_cpu * f.f_cpu;
        self.gpu[host] = self.gpu[host] + profile.nominal_gpu * f.f_gpu;
        self.disk[host] = self.disk[host] + profile.nominal_disk * f.f_disk;
        self.models_on[host] -= 1;
        self.latency_so_far = latency_before;
        if k > 0 {
            let prev = self.assignment[k - 1];
            if prev != host {
                let bw = self.scenario.catalog[self.chain.model_ids[k - 1]].bandwidth_demand;
                self.link_load[prev] = self.link_load[prev] - bw;
                self.link_load[host] = self.link_load[host] - bw;
            }
        }
    }

    fn dfs(&mut self, k: usize, partial_energy: S) {
        if self.hit_limit {
            return;
        }
        let n = self.scenario.n_hosts();
        // value ordering by incremental energy, lowest host index on ties
        let mut order: Vec<(S, usize)> =
            (0..n).map(|host| (self.energy_delta(k, host), host)).collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

        for (delta, host) in order {
            if self.hit_limit {
                return;
            }
            if let Some(limit) = self.options.node_limit {
                if self.nodes >= limit {
                    self.hit_limit = true;
                    return;
                }
            }
            let latency_before = self.latency_so_far;
            if self.options.prune {
                if self.try_place(k, host).is_none() {
                    continue;
                }
            } else {
                // walk the full tree: place without feasibility screening
                self.force_place(k, host);
            }
            self.nodes += 1;
            let current = partial_energy + delta;

            let complete = k + 1 == self.chain.len();
            if complete {
                self.consider_leaf(current);
            } else {
                let bound =
                    (current + self.future_min_compute[k + 1]) * self.options.bound_inflation;
                let pruned = self.options.prune
                    && self.incumbent.as_ref().map_or(false, |(best, _)| {
                        bound >= *best + S::of(PRUNE_GUARD_WATTS)
                    });
                if !pruned {
                    self.dfs(k + 1, current);
                }
            }

            if self.options.prune {
                self.unplace(k, host, latency_before);
            } else {
                self.force_unplace(k, host, latency_before);
            }
        }
    }

    /// Placement bookkeeping without constraint screening (full-tree mode).
    fn force_place(&mut self, k: usize, host: usize) {
        let profile = &self.scenario.catalog[self.chain.model_ids[k]];
        let f = &self.planning.factors[k];
        self.cpu[host] = self.cpu[host] - profile.nominal_cpu * f.f_cpu;
        self.gpu[host] = self.gpu[host] - profile.nominal_gpu * f.f_gpu;
        self.disk[host] = self.disk[host] - profile.nominal_disk * f.f_disk;
        self.models_on[host] += 1;
        if k > 0 && self.assignment[k - 1] != host {
            let bw = self.scenario.catalog[self.chain.model_ids[k - 1]].bandwidth_demand;
            let prev = self.assignment[k - 1];
            self.link_load[prev] = self.link_load[prev] + bw;
            self.link_load[host] = self.link_load[host] + bw;
            self.latency_so_far = self.latency_so_far
                + self.scenario.hosts[prev].link_latency
                + self.scenario.hosts[host].link_latency;
        }
        self.assignment[k] = host;
    }

    fn force_unplace(&mut self, k: usize, host: usize, latency_before: S) {
        self.unplace(k, host, latency_before);
    }

    fn consider_leaf(&mut self, _incremental_energy: S) {
        let placement = Placement::new(self.assignment.clone());
        let report = check_constraints(&placement, self.chain, self.planning, self.scenario)
            .expect("index-valid");
        if !planning_feasible(&report) {
            return;
        }
        // score leaves through the evaluator so the objective is
        // bit-identical with the enumeration oracle
        let e = energy(&placement, self.chain, self.planning, self.scenario).expect("index-valid");
        let better = match &self.incumbent {
            None => true,
            Some((best, best_assignment)) => {
                e < *best || (e == *best && self.assignment < *best_assignment)
            }
        };
        if better {
            self.incumbent = Some((e, self.assignment.clone()));
        }
    }
}

/// Depth-first branch-and-bound over chain positions in order, hosts tried
/// in ascending incremental energy. Prunes on partial-assignment constraint
/// violations and on `partial energy + remaining minimum compute power`
/// against the incumbent.
pub fn branch_and_bound_with<S: Scalar>(
    chain: &ServiceChain<S>,
    scenario: &Scenario<S>,
    planning: &RealizedDemand<S>,
    options: BnbOptions<S>,
) -> Result<SolveResult<S>, SolverError> {
    check_factors(chain, planning)?;
    let start = Instant::now();
    let m = chain.len();
    let n = scenario.n_hosts();

    // compute latency alone can already exceed the budget
    let mut base_latency = S::zero();
    for &id in &chain.model_ids {
        base_latency = base_latency + scenario.catalog[id].compute_latency;
    }
    if base_latency > chain.latency_budget {
        return Ok(SolveResult::infeasible(0, start));
    }

    let mut future_min_compute = vec![S::zero(); m + 1];
    for k in (0..m).rev() {
        let profile = &scenario.catalog[chain.model_ids[k]];
        let f = &planning.factors[k];
        let min_power = scenario
            .hosts
            .iter()
            .map(|h| {
                h.cpu_unit_power * profile.nominal_cpu * f.f_cpu
                    + h.gpu_unit_power * profile.nominal_gpu * f.f_gpu
            })
            .fold(S::infinity(), S::min);
        future_min_compute[k] = future_min_compute[k + 1] + min_power;
    }

    let mut search = BnbSearch {
        chain,
        scenario,
        planning,
        options,
        future_min_compute,
        assignment: vec![0; m],
        cpu: scenario.hosts.iter().map(|h| h.cpu_capacity).collect(),
        gpu: scenario.hosts.iter().map(|h| h.gpu_capacity).collect(),
        disk: scenario.hosts.iter().map(|h| h.disk_capacity).collect(),
        link_load: vec![S::zero(); n],
        models_on: vec![0; n],
        latency_so_far: base_latency,
        incumbent: None,
        nodes: 0,
        hit_limit: false,
    };
    search.dfs(0, S::zero());

    let wall = start.elapsed().as_secs_f64() * 1e3;
    let (nodes, hit_limit) = (search.nodes, search.hit_limit);
    Ok(match (search.incumbent, hit_limit) {
        (Some((objective, host_of)), false) => SolveResult {
            placement: Some(Placement::new(host_of)),
            objective: Some(objective),
            status: SolveStatus::Optimal,
            nodes_explored: nodes,
            wall_time_ms: wall,
        },
        // limit reached with a solution in hand: usable but not certified
        (Some((objective, host_of)), true) => SolveResult {
            placement: Some(Placement::new(host_of)),
            objective: Some(objective),
            status: SolveStatus::Feasible,
            nodes_explored: nodes,
            wall_time_ms: wall,
        },
        (None, true) => SolveResult {
            placement: None,
            objective: None,
            status: SolveStatus::Timeout,
            nodes_explored: nodes,
            wall_time_ms: wall,
        },
        (None, false) => SolveResult {
            placement: None,
            objective: None,
            status: SolveStatus::Infeasible,
            nodes_explored: nodes,
            wall_time_ms: wall,
        },
    })
}

pub fn branch_and_bound<S: Scalar>(
    chain: &ServiceChain<S>,
    scenario: &Scenario<S>,
    planning: &RealizedDemand<S>,
    node_limit: Option<u64>,
) -> Result<SolveResult<S>, SolverError> {
    branch_and_bound_with(chain, scenario, planning, BnbOptions { node_limit, ..Default::default() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::generate_request;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny4() -> Scenario {
        Scenario::builtin("tiny4").unwrap()
    }

    fn hosts10() -> Scenario {
        Scenario::builtin("hosts10").unwrap()
    }

    fn chain_of(scenario: &Scenario, ids: &[usize]) -> ServiceChain {
        let compute: f64 = ids.iter().map(|&i| scenario.catalog[i].compute_latency).sum();
        ServiceChain {
            model_ids: ids.to_vec(),
            latency_budget: compute + ids.len() as f64 * scenario.mean_link_latency(),
            sla_completion: 0.0,
        }
    }

    #[test]
    fn first_fit_scans_lowest_index() {
        let s = hosts10();
        let ones = RealizedDemand::nominal(1);
        let result = first_fit(&chain_of(&s, &[0]), &s, &ones).unwrap();
        assert_eq!(result.status, SolveStatus::Feasible);
        assert_eq!(result.placement.unwrap().host_of, vec![0]);

        // three copies of cpu 4: host 0 takes two (8 <= 10), third spills
        let chain = chain_of(&s, &[0, 0, 0]);
        let result = first_fit(&chain, &s, &RealizedDemand::nominal(3)).unwrap();
        assert_eq!(result.placement.unwrap().host_of, vec![0, 0, 1]);
    }

    #[test]
    fn first_fit_rejects_overload() {
        let s = tiny4();
        // 10 heavy models: 40 cpu against 30 total
        let chain = chain_of(&s, &[0; 10]);
        let result = first_fit(&chain, &s, &RealizedDemand::nominal(10)).unwrap();
        assert_eq!(result.status, SolveStatus::Infeasible);
        assert!(result.placement.is_none());
    }

    #[test]
    fn brute_force_singleton_tie_break() {
        let mut s = tiny4();
        for h in &mut s.hosts {
            h.cpu_capacity = 10.0;
            h.gpu_capacity = 10.0;
            h.disk_capacity = 10.0;
            h.link_latency = 30.0;
            h.link_bandwidth = 1000.0;
        }
        let chain = chain_of(&s, &[3]);
        let result = brute_force(&chain, &s, &RealizedDemand::nominal(1)).unwrap();
        assert_eq!(result.status, SolveStatus::Optimal);
        assert_eq!(result.placement.unwrap().host_of, vec![0]);
    }

    #[test]
    fn brute_force_two_by_two_matches_hand_enumeration() {
        // two hosts, two positions: 4 candidates evaluated by hand.
        let mut s = tiny4();
        s.hosts.truncate(2);
        s.hosts[0].cpu_capacity = 4.0;
        s.hosts[0].gpu_capacity = 4.0;
        s.hosts[0].disk_capacity = 8.0;
        s.hosts[1].cpu_capacity = 8.0;
        s.hosts[1].gpu_capacity = 8.0;
        s.hosts[1].disk_capacity = 8.0;
        let chain = chain_of(&s, &[4, 4]); // cpu 2, disk 2, bandwidth 20 each
        let result = brute_force(&chain, &s, &RealizedDemand::nominal(2)).unwrap();
        // by hand: colocated on either host costs 2*(200*2+200*2)+100 = 1700;
        // split costs 1600 compute + 200 idle + 0.1*40 net = 1804.
        // (0,0) and (1,1) tie at 1700; lexicographic tie-break keeps (0,0).
        assert_eq!(result.status, SolveStatus::Optimal);
        assert!((result.objective.unwrap() - 1700.0).abs() < 1e-9);
        assert_eq!(result.placement.unwrap().host_of, vec![0, 0]);
        assert_eq!(result.nodes_explored, 4);
    }

    #[test]
    fn brute_force_detects_infeasible_everywhere() {
        let mut s = tiny4();
        s.hosts.truncate(2);
        // nothing can host cpu 4
        s.hosts[0].cpu_capacity = 1.0;
        s.hosts[1].cpu_capacity = 1.0;
        let chain = chain_of(&s, &[0]);
        let result = brute_force(&chain, &s, &RealizedDemand::nominal(1)).unwrap();
        assert_eq!(result.status, SolveStatus::Infeasible);
    }

    #[test]
    fn brute_force_rejects_oversized_instances() {
        let s = hosts10();
        let chain = chain_of(&s, &[0; 7]); // 10^7 > 1e6
        assert!(matches!(
            brute_force(&chain, &s, &RealizedDemand::nominal(7)),
            Err(SolverError::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn bnb_degenerate_single_model_picks_lowest_energy_host() {
        let s = tiny4();
        let chain = chain_of(&s, &[6]);
        let result = branch_and_bound(&chain, &s, &RealizedDemand::nominal(1), None).unwrap();
        assert_eq!(result.status, SolveStatus::Optimal);
        // all hosts have equal power constants: lowest index wins
        assert_eq!(result.placement.unwrap().host_of, vec![0]);
    }

    #[test]
    fn bnb_timeout_on_node_limit_one() {
        let s = tiny4();
        let chain = chain_of(&s, &[0, 1, 2]);
        let result =
            branch_and_bound(&chain, &s, &RealizedDemand::nominal(3), Some(1)).unwrap();
        assert_eq!(result.status, SolveStatus::Timeout);
        assert!(result.placement.is_none());
    }

    #[test]
    fn oracle_equality_on_random_instances() {
        let s = tiny4();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut feasible_seen = 0;
        let mut infeasible_seen = 0;
        for trial in 0..50 {
            let m = rng.random_range(1..=6);
            let chain = {
                let mut c = generate_request(&s, m, &mut rng).unwrap();
                if trial % 3 == 0 {
                    // tighten the budget to force some infeasible instances
                    c.latency_budget = c.latency_budget * 0.4;
                }
                c
            };
            let planning = if trial % 2 == 0 {
                RealizedDemand::nominal(m)
            } else {
                crate::uncertainty::draw_realization(&chain, &s, &mut rng).unwrap()
            };
            let exact = brute_force(&chain, &s, &planning).unwrap();
            let bnb = branch_and_bound(&chain, &s, &planning, None).unwrap();
            assert_eq!(exact.status, bnb.status, "trial {trial}");
            match exact.status {
                SolveStatus::Optimal => {
                    feasible_seen += 1;
                    assert_eq!(exact.objective.unwrap(), bnb.objective.unwrap(), "trial {trial}");
                }
                SolveStatus::Infeasible => infeasible_seen += 1,
                other => panic!("unexpected status {other:?}"),
            }
        }
        assert!(feasible_seen > 5, "want a real mix, got {feasible_seen} feasible");
        assert!(infeasible_seen > 5, "want a real mix, got {infeasible_seen} infeasible");
    }

    #[test]
    fn unpruned_search_walks_the_full_tree() {
        let s = tiny4();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in 1..=4usize {
            let chain = generate_request(&s, m, &mut rng).unwrap();
            let planning = RealizedDemand::nominal(m);
            let full = branch_and_bound_with(
                &chain,
                &s,
                &planning,
                BnbOptions { prune: false, ..Default::default() },
            )
            .unwrap();
            // full tree over 4 hosts: 4 + 4^2 + ... + 4^m
            let expected: u64 = (1..=m as u32).map(|k| 4u64.pow(k)).sum();
            assert_eq!(full.nodes_explored, expected, "m = {m}");
            let pruned = branch_and_bound(&chain, &s, &planning, None).unwrap();
            assert!(pruned.nodes_explored <= full.nodes_explored);
            assert_eq!(pruned.status, full.status);
            if let (Some(a), Some(b)) = (pruned.objective, full.objective) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn first_fit_feasible_implies_brute_force_feasible() {
        let s = tiny4();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..30 {
            let m = rng.random_range(1..=5);
            let chain = generate_request(&s, m, &mut rng).unwrap();
            let planning = RealizedDemand::nominal(m);
            let ff = first_fit(&chain, &s, &planning).unwrap();
            if ff.status == SolveStatus::Feasible {
                let exact = brute_force(&chain, &s, &planning).unwrap();
                assert_eq!(exact.status, SolveStatus::Optimal);
                assert!(exact.objective.unwrap() <= ff.objective.unwrap() + 1e-9);
            }
        }
    }

    #[test]
    fn corrupted_bound_misses_optima() {
        // inflating the lower bound makes the search prune real solutions on
        // at least one instance; the oracle harness relies on this tripwire
        let s = tiny4();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut mismatch = false;
        for _ in 0..30 {
            let m = rng.random_range(2..=5);
            let chain = generate_request(&s, m, &mut rng).unwrap();
            let planning = RealizedDemand::nominal(m);
            let exact = brute_force(&chain, &s, &planning).unwrap();
            let corrupt = branch_and_bound_with(
                &chain,
                &s,
                &planning,
                BnbOptions { bound_inflation: 1.5, ..Default::default() },
            )
            .unwrap();
            if exact.status != corrupt.status || exact.objective != corrupt.objective {
                mismatch = true;
                break;
            }
        }
        assert!(mismatch, "bound corruption was never detected");
    }

    #[test]
    fn solvers_are_deterministic() {
        let s = tiny4();
        let chain = chain_of(&s, &[0, 2, 4, 6]);
        let planning = RealizedDemand::nominal(4);
        let a = branch_and_bound(&chain, &s, &planning, None).unwrap();
        let b = branch_and_bound(&chain, &s, &planning, None).unwrap();
        assert_eq!(a.placement, b.placement);
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.nodes_explored, b.nodes_explored);
    }
}
