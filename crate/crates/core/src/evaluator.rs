//! Energy objective and constraint checking for a placement under one
//! uncertainty realization.
//!
//! Traffic exists only between consecutive chain positions on different
//! hosts; such a pair consumes the upstream model's bandwidth demand on both
//! endpoints' access links and adds both links' latencies to the chain
//! latency. Colocated pairs consume nothing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Placement, Scenario, ServiceChain};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("placement length {placement} does not match chain length {chain}")]
    LengthMismatch { placement: usize, chain: usize },
    #[error("chain must have at least one position")]
    EmptyChain,
    #[error("host index {host} out of range for {n_hosts} hosts")]
    HostOutOfRange { host: usize, n_hosts: usize },
    #[error("model id {model} out of range for catalog of {n_models}")]
    ModelOutOfRange { model: usize, n_models: usize },
    #[error("no constraint reports given")]
    NoReports,
}

/// Per-position multiplicative uncertainty factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct FactorQuad<S: Scalar = f64> {
    pub f_cpu: S,
    pub f_gpu: S,
    pub f_disk: S,
    pub f_completion: S,
}

impl<S: Scalar> FactorQuad<S> {
    pub fn ones() -> Self {
        FactorQuad { f_cpu: S::one(), f_gpu: S::one(), f_disk: S::one(), f_completion: S::one() }
    }
}

/// One sampled realization: a factor quadruple per chain position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct RealizedDemand<S: Scalar = f64> {
    pub factors: Vec<FactorQuad<S>>,
}

impl<S: Scalar> RealizedDemand<S> {
    /// The zero-uncertainty realization: every factor is 1.
    pub fn nominal(len: usize) -> Self {
        RealizedDemand { factors: vec![FactorQuad::ones(); len] }
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }
}

/// Which hosts and access links a placement switches on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationState {
    pub active_hosts: Vec<bool>,
    pub active_links: Vec<bool>,
}

/// The six constraint families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintFamily {
    Cpu,
    Gpu,
    Bandwidth,
    Latency,
    Disk,
    Sla,
}

pub const ALL_FAMILIES: [ConstraintFamily; 6] = [
    ConstraintFamily::Cpu,
    ConstraintFamily::Gpu,
    ConstraintFamily::Bandwidth,
    ConstraintFamily::Latency,
    ConstraintFamily::Disk,
    ConstraintFamily::Sla,
];

/// Feasibility verdict with worst-case slack per family.
///
/// Slack convention: capacity minus usage for resource families (the minimum
/// over hosts or links), budget minus total for latency, mean realized
/// completion minus the SLA target for sla. Satisfied iff slack >= 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct ConstraintReport<S: Scalar = f64> {
    pub feasible: bool,
    pub violated: Vec<ConstraintFamily>,
    pub cpu_slack: S,
    pub gpu_slack: S,
    pub bandwidth_slack: S,
    pub latency_slack: S,
    pub disk_slack: S,
    pub sla_slack: S,
}

impl<S: Scalar> ConstraintReport<S> {
    pub fn slack(&self, family: ConstraintFamily) -> S {
        match family {
            ConstraintFamily::Cpu => self.cpu_slack,
            ConstraintFamily::Gpu => self.gpu_slack,
            ConstraintFamily::Bandwidth => self.bandwidth_slack,
            ConstraintFamily::Latency => self.latency_slack,
            ConstraintFamily::Disk => self.disk_slack,
            ConstraintFamily::Sla => self.sla_slack,
        }
    }
}

fn check_indices<S: Scalar>(
    placement: &Placement,
    chain: &ServiceChain<S>,
    scenario: &Scenario<S>,
) -> Result<(), EvalError> {
    if chain.is_empty() {
        return Err(EvalError::EmptyChain);
    }
    if placement.len() != chain.len() {
        return Err(EvalError::LengthMismatch { placement: placement.len(), chain: chain.len() });
    }
    for &h in &placement.host_of {
        if h >= scenario.n_hosts() {
            return Err(EvalError::HostOutOfRange { host: h, n_hosts: scenario.n_hosts() });
        }
    }
    for &m in &chain.model_ids {
        if m >= scenario.catalog.len() {
            return Err(EvalError::ModelOutOfRange { model: m, n_models: scenario.catalog.len() });
        }
    }
    Ok(())
}

/// Load on one host's access link: the sum over cross-host consecutive pairs
/// touching this host of the upstream model's bandwidth demand.
pub fn link_load<S: Scalar>(
    placement: &Placement,
    chain: &ServiceChain<S>,
    scenario: &Scenario<S>,
    host: usize,
) -> S {
    let mut load = S::zero();
    for k in 0..placement.len().saturating_sub(1) {
        let (src, dst) = (placement.host_of[k], placement.host_of[k + 1]);
        if src != dst && (src == host || dst == host) {
            load = load + scenario.catalog[chain.model_ids[k]].bandwidth_demand;
        }
    }
    load
}

/// Hosts with at least one model, links carrying positive traffic.
pub fn derive_activation<S: Scalar>(
    placement: &Placement,
    chain: &ServiceChain<S>,
    scenario: &Scenario<S>,
) -> Result<ActivationState, EvalError> {
    check_indices(placement, chain, scenario)?;
    let mut active_hosts = vec![false; scenario.n_hosts()];
    for &h in &placement.host_of {
        active_hosts[h] = true;
    }
    let active_links = (0..scenario.n_hosts())
        .map(|h| link_load(placement, chain, scenario, h) > S::zero())
        .collect();
    Ok(ActivationState { active_hosts, active_links })
}

/// The three additive parts of the objective: per-unit compute power, idle
/// power of active hosts, and network power over link loads.
pub struct EnergyTerms<S: Scalar = f64> {
    pub compute: S,
    pub idle: S,
    pub network: S,
}

impl<S: Scalar> EnergyTerms<S> {
    pub fn total(&self) -> S {
        self.compute + self.idle + self.network
    }
}

pub fn energy_terms<S: Scalar>(
    placement: &Placement,
    chain: &ServiceChain<S>,
    realized: &RealizedDemand<S>,
    scenario: &Scenario<S>,
) -> Result<EnergyTerms<S>, EvalError> {
    check_indices(placement, chain, scenario)?;
    if realized.len() != chain.len() {
        return Err(EvalError::LengthMismatch { placement: realized.len(), chain: chain.len() });
    }
    let mut compute = S::zero();
    for (k, &h) in placement.host_of.iter().enumerate() {
        let profile = &scenario.catalog[chain.model_ids[k]];
        let host = &scenario.hosts[h];
        let f = &realized.factors[k];
        compute = compute
            + host.cpu_unit_power * profile.nominal_cpu * f.f_cpu
            + host.gpu_unit_power * profile.nominal_gpu * f.f_gpu;
    }
    let activation = derive_activation(placement, chain, scenario)?;
    let mut idle = S::zero();
    for (h, &active) in activation.active_hosts.iter().enumerate() {
        if active {
            idle = idle + scenario.hosts[h].idle_power;
        }
    }
    let mut network = S::zero();
    for h in 0..scenario.n_hosts() {
        network = network + scenario.net_unit_power * link_load(placement, chain, scenario, h);
    }
    Ok(EnergyTerms { compute, idle, network })
}

/// Total infrastructure power for the placement, in watts.
pub fn energy<S: Scalar>(
    placement: &Placement,
    chain: &ServiceChain<S>,
    realized: &RealizedDemand<S>,
    scenario: &Scenario<S>,
) -> Result<S, EvalError> {
    Ok(energy_terms(placement, chain, realized, scenario)?.total())
}

/// Check all six constraint families and report worst-case slacks.
pub fn check_constraints<S: Scalar>(
    placement: &Placement,
    chain: &ServiceChain<S>,
    realized: &RealizedDemand<S>,
    scenario: &Scenario<S>,
) -> Result<ConstraintReport<S>, EvalError> {
    check_indices(placement, chain, scenario)?;
    if realized.len() != chain.len() {
        return Err(EvalError::LengthMismatch { placement: realized.len(), chain: chain.len() });
    }
    let n = scenario.n_hosts();
    let mut cpu_use = vec![S::zero(); n];
    let mut gpu_use = vec![S::zero(); n];
    let mut disk_use = vec![S::zero(); n];
    for (k, &h) in placement.host_of.iter().enumerate() {
        let profile = &scenario.catalog[chain.model_ids[k]];
        let f = &realized.factors[k];
        cpu_use[h] = cpu_use[h] + profile.nominal_cpu * f.f_cpu;
        gpu_use[h] = gpu_use[h] + profile.nominal_gpu * f.f_gpu;
        disk_use[h] = disk_use[h] + profile.nominal_disk * f.f_disk;
    }
    let min_slack = |usage: &[S], cap: fn(&crate::domain::HostSpec<S>) -> S| -> S {
        (0..n)
            .map(|h| cap(&scenario.hosts[h]) - usage[h])
            .fold(S::infinity(), S::min)
    };
    let cpu_slack = min_slack(&cpu_use, |h| h.cpu_capacity);
    let gpu_slack = min_slack(&gpu_use, |h| h.gpu_capacity);
    let disk_slack = min_slack(&disk_use, |h| h.disk_capacity);

    let bandwidth_slack = (0..n)
        .map(|h| scenario.hosts[h].link_bandwidth - link_load(placement, chain, scenario, h))
        .fold(S::infinity(), S::min);

    let mut latency_total = S::zero();
    for &id in &chain.model_ids {
        latency_total = latency_total + scenario.catalog[id].compute_latency;
    }
    for k in 0..placement.len() - 1 {
        let (src, dst) = (placement.host_of[k], placement.host_of[k + 1]);
        if src != dst {
            latency_total = latency_total
                + scenario.hosts[src].link_latency
                + scenario.hosts[dst].link_latency;
        }
    }
    let latency_slack = chain.latency_budget - latency_total;

    let mut completion_total = S::zero();
    for (k, &id) in chain.model_ids.iter().enumerate() {
        completion_total = completion_total
            + scenario.catalog[id].nominal_completion_rate * realized.factors[k].f_completion;
    }
    let sla_slack = completion_total / S::of(chain.len() as f64) - chain.sla_completion;

    let report = ConstraintReport {
        feasible: true,
        violated: Vec::new(),
        cpu_slack,
        gpu_slack,
        bandwidth_slack,
        latency_slack,
        disk_slack,
        sla_slack,
    };
    let violated: Vec<ConstraintFamily> = ALL_FAMILIES
        .into_iter()
        .filter(|&fam| report.slack(fam) < S::zero())
        .collect();
    Ok(ConstraintReport { feasible: violated.is_empty(), violated, ..report })
}

/// Fraction of feasible reports.
pub fn acceptance_ratio<S: Scalar>(reports: &[ConstraintReport<S>]) -> Result<f64, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    let feasible = reports.iter().filter(|r| r.feasible).count();
    Ok(feasible as f64 / reports.len() as f64)
}
