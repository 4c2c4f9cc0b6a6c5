//! Infrastructure, model-catalog, service-chain, and placement data model.
//!
//! The network is a star: every host owns exactly one access link, so link
//! attributes live on [`HostSpec`]. Traffic between consecutive chain
//! positions on different hosts traverses both endpoints' access links.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value at {key}: {message}")]
    Invariant { key: String, message: String },
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("chain length must be at least 1")]
    EmptyChain,
}

/// One host server and its access link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct HostSpec<S: Scalar = f64> {
    pub id: usize,
    pub cpu_capacity: S,
    pub gpu_capacity: S,
    pub disk_capacity: S,
    pub link_bandwidth: S,
    pub link_latency: S,
    pub idle_power: S,
    pub cpu_unit_power: S,
    pub gpu_unit_power: S,
}

/// Distribution families used for the demand/performance deltas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistKind {
    Normal,
    Uniform,
}

/// A clipped one-dimensional distribution. For `normal`, `param_a`/`param_b`
/// are mean and standard deviation; for `uniform`, lower and upper bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct DistributionSpec<S: Scalar = f64> {
    pub kind: DistKind,
    #[serde(rename = "a")]
    pub param_a: S,
    #[serde(rename = "b")]
    pub param_b: S,
    #[serde(default = "neg_inf")]
    pub clip_lo: S,
    #[serde(default = "pos_inf")]
    pub clip_hi: S,
}

fn neg_inf<S: Scalar>() -> S {
    S::neg_infinity()
}

fn pos_inf<S: Scalar>() -> S {
    S::infinity()
}

impl<S: Scalar> DistributionSpec<S> {
    pub fn normal(mean: f64, stddev: f64, clip_lo: f64, clip_hi: f64) -> Self {
        DistributionSpec {
            kind: DistKind::Normal,
            param_a: S::of(mean),
            param_b: S::of(stddev),
            clip_lo: S::of(clip_lo),
            clip_hi: S::of(clip_hi),
        }
    }

    pub fn uniform(lo: f64, hi: f64, clip_lo: f64, clip_hi: f64) -> Self {
        DistributionSpec {
            kind: DistKind::Uniform,
            param_a: S::of(lo),
            param_b: S::of(hi),
            clip_lo: S::of(clip_lo),
            clip_hi: S::of(clip_hi),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> S {
        let raw = match self.kind {
            DistKind::Normal => self.param_a + self.param_b * S::standard_normal(rng),
            DistKind::Uniform => {
                self.param_a + (self.param_b - self.param_a) * S::unit_uniform(rng)
            }
        };
        raw.max(self.clip_lo).min(self.clip_hi)
    }

    fn validate(&self, key: &str) -> Result<(), DomainError> {
        let bad = |message: &str| DomainError::Invariant { key: key.to_string(), message: message.to_string() };
        match self.kind {
            DistKind::Uniform if self.param_a > self.param_b => {
                return Err(bad("uniform lower bound exceeds upper bound"));
            }
            DistKind::Normal if self.param_b < S::zero() => {
                return Err(bad("normal stddev must be nonnegative"));
            }
            _ => {}
        }
        if self.clip_lo > self.clip_hi {
            return Err(bad("clip_lo exceeds clip_hi"));
        }
        Ok(())
    }
}

/// Default demand delta: normal(0.5, 0.25) clipped to [0, 1].
pub fn default_demand_delta<S: Scalar>() -> DistributionSpec<S> {
    DistributionSpec::normal(0.5, 0.25, 0.0, 1.0)
}

/// Default completion-rate delta: uniform(0, 15) clipped to [0, 15].
pub fn default_completion_delta<S: Scalar>() -> DistributionSpec<S> {
    DistributionSpec::uniform(0.0, 15.0, 0.0, 15.0)
}

/// One AI-model profile from the catalog, with its uncertainty generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct AIModelProfile<S: Scalar = f64> {
    pub id: usize,
    pub nominal_cpu: S,
    pub nominal_gpu: S,
    pub nominal_disk: S,
    pub bandwidth_demand: S,
    pub compute_latency: S,
    pub nominal_completion_rate: S,
    pub cpu_gpu_delta_dist: DistributionSpec<S>,
    pub disk_delta_dist: DistributionSpec<S>,
    pub completion_delta_dist: DistributionSpec<S>,
}

/// An ordered request: catalog references plus chain-level targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct ServiceChain<S: Scalar = f64> {
    pub model_ids: Vec<usize>,
    pub latency_budget: S,
    pub sla_completion: S,
}

impl<S: Scalar> ServiceChain<S> {
    pub fn len(&self) -> usize {
        self.model_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_ids.is_empty()
    }
}

/// Host index per chain position: the decision variable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub host_of: Vec<usize>,
}

impl Placement {
    pub fn new(host_of: Vec<usize>) -> Self {
        Placement { host_of }
    }

    pub fn len(&self) -> usize {
        self.host_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.host_of.is_empty()
    }
}

/// The full experiment world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct Scenario<S: Scalar = f64> {
    pub hosts: Vec<HostSpec<S>>,
    pub catalog: Vec<AIModelProfile<S>>,
    pub net_unit_power: S,
    pub default_sla_completion: S,
    pub latency_slack: S,
    pub seed: u64,
}

impl<S: Scalar> Scenario<S> {
    pub fn n_hosts(&self) -> usize {
        self.hosts.len()
    }

    pub fn mean_link_latency(&self) -> S {
        let total: S = self.hosts.iter().map(|h| h.link_latency).sum();
        total / S::of(self.hosts.len() as f64)
    }

    /// Catalog-wide maxima used to normalize per-model statistics.
    pub fn catalog_maxima(&self) -> CatalogMaxima<S> {
        let fold = |f: fn(&AIModelProfile<S>) -> S| {
            self.catalog.iter().map(f).fold(S::zero(), S::max)
        };
        CatalogMaxima {
            cpu: fold(|m| m.nominal_cpu),
            gpu: fold(|m| m.nominal_gpu),
            disk: fold(|m| m.nominal_disk),
            completion: fold(|m| m.nominal_completion_rate),
        }
    }

    /// FNV-1a hash of the canonical JSON form, used to tie checkpoints to
    /// the scenario they were trained on.
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_string(self).expect("scenario serializes");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in json.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        validate_scenario(self)
    }

    /// A bundled scenario by name, or `None` for an unknown name.
    pub fn builtin(name: &str) -> Option<Scenario<S>> {
        let text = match name {
            "hosts10" => HOSTS10_TOML,
            "hosts20" => HOSTS20_TOML,
            "tiny4" => TINY4_TOML,
            _ => return None,
        };
        Some(parse_scenario(text, name).expect("bundled scenario is valid"))
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["hosts10", "hosts20", "tiny4"]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CatalogMaxima<S: Scalar = f64> {
    pub cpu: S,
    pub gpu: S,
    pub disk: S,
    pub completion: S,
}

const HOSTS10_TOML: &str = include_str!("../scenarios/hosts10.toml");
const HOSTS20_TOML: &str = include_str!("../scenarios/hosts20.toml");
const TINY4_TOML: &str = include_str!("../scenarios/tiny4.toml");

// ---- scenario file schema ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "", deserialize = ""))]
struct ScenarioFile<S: Scalar> {
    #[serde(default)]
    seed: u64,
    power: PowerBlock<S>,
    #[serde(default)]
    sla: SlaBlock<S>,
    hosts: Vec<HostEntry<S>>,
    catalog: Vec<CatalogEntry<S>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "", deserialize = ""))]
struct PowerBlock<S: Scalar> {
    cpu_unit: S,
    gpu_unit: S,
    idle: S,
    net_unit: S,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "", deserialize = ""))]
struct SlaBlock<S: Scalar> {
    completion: Option<S>,
    latency_slack: Option<S>,
}

impl<S: Scalar> Default for SlaBlock<S> {
    fn default() -> Self {
        SlaBlock { completion: None, latency_slack: None }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "", deserialize = ""))]
struct HostEntry<S: Scalar> {
    cpu: S,
    gpu: S,
    disk: S,
    link_bandwidth: S,
    link_latency: S,
    #[serde(skip_serializing_if = "Option::is_none")]
    idle_power: Option<S>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cpu_unit_power: Option<S>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gpu_unit_power: Option<S>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "", deserialize = ""))]
struct CatalogEntry<S: Scalar> {
    cpu_gpu: S,
    disk: S,
    bandwidth: S,
    latency: S,
    completion: S,
    #[serde(skip_serializing_if = "Option::is_none")]
    deltas: Option<DeltaBlock<S>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "", deserialize = ""))]
struct DeltaBlock<S: Scalar> {
    cpu_gpu: Option<DistributionSpec<S>>,
    disk: Option<DistributionSpec<S>>,
    completion: Option<DistributionSpec<S>>,
}

fn scenario_from_file<S: Scalar>(file: ScenarioFile<S>) -> Scenario<S> {
    let hosts = file
        .hosts
        .iter()
        .enumerate()
        .map(|(id, h)| HostSpec {
            id,
            cpu_capacity: h.cpu,
            gpu_capacity: h.gpu,
            disk_capacity: h.disk,
            link_bandwidth: h.link_bandwidth,
            link_latency: h.link_latency,
            idle_power: h.idle_power.unwrap_or(file.power.idle),
            cpu_unit_power: h.cpu_unit_power.unwrap_or(file.power.cpu_unit),
            gpu_unit_power: h.gpu_unit_power.unwrap_or(file.power.gpu_unit),
        })
        .collect();
    let catalog = file
        .catalog
        .iter()
        .enumerate()
        .map(|(id, c)| {
            let deltas = c.deltas.as_ref();
            AIModelProfile {
                id,
                nominal_cpu: c.cpu_gpu,
                nominal_gpu: c.cpu_gpu,
                nominal_disk: c.disk,
                bandwidth_demand: c.bandwidth,
                compute_latency: c.latency,
                nominal_completion_rate: c.completion,
                cpu_gpu_delta_dist: deltas
                    .and_then(|d| d.cpu_gpu)
                    .unwrap_or_else(default_demand_delta),
                disk_delta_dist: deltas.and_then(|d| d.disk).unwrap_or_else(default_demand_delta),
                completion_delta_dist: deltas
                    .and_then(|d| d.completion)
                    .unwrap_or_else(default_completion_delta),
            }
        })
        .collect();
    Scenario {
        hosts,
        catalog,
        net_unit_power: file.power.net_unit,
        default_sla_completion: file.sla.completion.unwrap_or_else(|| S::of(85.0)),
        latency_slack: file.sla.latency_slack.unwrap_or_else(S::one),
        seed: file.seed,
    }
}

fn scenario_to_file<S: Scalar>(s: &Scenario<S>) -> ScenarioFile<S> {
    let uniform_power = PowerBlock {
        cpu_unit: s.hosts[0].cpu_unit_power,
        gpu_unit: s.hosts[0].gpu_unit_power,
        idle: s.hosts[0].idle_power,
        net_unit: s.net_unit_power,
    };
    let hosts = s
        .hosts
        .iter()
        .map(|h| HostEntry {
            cpu: h.cpu_capacity,
            gpu: h.gpu_capacity,
            disk: h.disk_capacity,
            link_bandwidth: h.link_bandwidth,
            link_latency: h.link_latency,
            idle_power: (h.idle_power != uniform_power.idle).then_some(h.idle_power),
            cpu_unit_power: (h.cpu_unit_power != uniform_power.cpu_unit)
                .then_some(h.cpu_unit_power),
            gpu_unit_power: (h.gpu_unit_power != uniform_power.gpu_unit)
                .then_some(h.gpu_unit_power),
        })
        .collect();
    let catalog = s
        .catalog
        .iter()
        .map(|m| CatalogEntry {
            cpu_gpu: m.nominal_cpu,
            disk: m.nominal_disk,
            bandwidth: m.bandwidth_demand,
            latency: m.compute_latency,
            completion: m.nominal_completion_rate,
            deltas: Some(DeltaBlock {
                cpu_gpu: Some(m.cpu_gpu_delta_dist),
                disk: Some(m.disk_delta_dist),
                completion: Some(m.completion_delta_dist),
            }),
        })
        .collect();
    ScenarioFile {
        seed: s.seed,
        power: uniform_power,
        sla: SlaBlock {
            completion: Some(s.default_sla_completion),
            latency_slack: Some(s.latency_slack),
        },
        hosts,
        catalog,
    }
}

fn validate_scenario<S: Scalar>(s: &Scenario<S>) -> Result<(), DomainError> {
    let bad = |key: String, message: &str| -> DomainError {
        DomainError::Invariant { key, message: message.to_string() }
    };
    if s.hosts.is_empty() {
        return Err(bad("hosts".into(), "at least one host is required"));
    }
    if s.catalog.is_empty() {
        return Err(bad("catalog".into(), "at least one catalog model is required"));
    }
    for (i, h) in s.hosts.iter().enumerate() {
        if h.id != i {
            return Err(bad(format!("hosts[{i}].id"), "ids must be contiguous from 0"));
        }
        let fields = [
            ("cpu", h.cpu_capacity),
            ("gpu", h.gpu_capacity),
            ("disk", h.disk_capacity),
            ("link_bandwidth", h.link_bandwidth),
            ("link_latency", h.link_latency),
            ("idle_power", h.idle_power),
            ("cpu_unit_power", h.cpu_unit_power),
            ("gpu_unit_power", h.gpu_unit_power),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= S::zero()) {
                return Err(bad(format!("hosts[{i}].{name}"), "must be nonnegative and finite"));
            }
        }
    }
    for (i, m) in s.catalog.iter().enumerate() {
        if m.id != i {
            return Err(bad(format!("catalog[{i}].id"), "ids must be contiguous from 0"));
        }
        for (name, v) in [
            ("cpu_gpu", m.nominal_cpu),
            ("cpu_gpu", m.nominal_gpu),
            ("disk", m.nominal_disk),
            ("bandwidth", m.bandwidth_demand),
            ("latency", m.compute_latency),
        ] {
            if !(v.is_finite() && v > S::zero()) {
                return Err(bad(format!("catalog[{i}].{name}"), "must be positive and finite"));
            }
        }
        if !(m.nominal_completion_rate >= S::zero() && m.nominal_completion_rate <= S::of(100.0)) {
            return Err(bad(format!("catalog[{i}].completion"), "must lie in [0, 100]"));
        }
        m.cpu_gpu_delta_dist.validate(&format!("catalog[{i}].deltas.cpu_gpu"))?;
        m.disk_delta_dist.validate(&format!("catalog[{i}].deltas.disk"))?;
        m.completion_delta_dist.validate(&format!("catalog[{i}].deltas.completion"))?;
    }
    if !(s.net_unit_power.is_finite() && s.net_unit_power >= S::zero()) {
        return Err(bad("power.net_unit".into(), "must be nonnegative and finite"));
    }
    if !(s.default_sla_completion >= S::zero() && s.default_sla_completion <= S::of(100.0)) {
        return Err(bad("sla.completion".into(), "must lie in [0, 100]"));
    }
    if !(s.latency_slack >= S::one() && s.latency_slack.is_finite()) {
        return Err(bad("sla.latency_slack".into(), "must be at least 1"));
    }
    Ok(())
}

fn parse_scenario<S: Scalar>(text: &str, origin: &str) -> Result<Scenario<S>, DomainError> {
    let file: ScenarioFile<S> = toml::from_str(text).map_err(|e| DomainError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let scenario = scenario_from_file(file);
    validate_scenario(&scenario)?;
    Ok(scenario)
}

/// Load and validate a scenario file.
pub fn load_scenario<S: Scalar>(path: impl AsRef<Path>) -> Result<Scenario<S>, DomainError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DomainError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text, &path.display().to_string())
}

/// Serialize a scenario back to the file schema.
pub fn write_scenario<S: Scalar>(
    scenario: &Scenario<S>,
    path: impl AsRef<Path>,
) -> Result<(), DomainError> {
    let path = path.as_ref();
    let file = scenario_to_file(scenario);
    let text = toml::to_string(&file).expect("scenario file serializes");
    std::fs::write(path, text).map_err(|source| DomainError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Draw a service chain: models sampled uniformly with replacement from the
/// catalog. The latency budget scales with chain length:
/// `sum of compute latencies + m * latency_slack * mean link latency`.
pub fn generate_request<S: Scalar, R: Rng + ?Sized>(
    scenario: &Scenario<S>,
    chain_length: usize,
    rng: &mut R,
) -> Result<ServiceChain<S>, DomainError> {
    if scenario.catalog.is_empty() {
        return Err(DomainError::EmptyCatalog);
    }
    if chain_length == 0 {
        return Err(DomainError::EmptyChain);
    }
    let model_ids: Vec<usize> =
        (0..chain_length).map(|_| rng.random_range(0..scenario.catalog.len())).collect();
    let compute_total: S = model_ids.iter().map(|&id| scenario.catalog[id].compute_latency).sum();
    let latency_budget = compute_total
        + S::of(chain_length as f64) * scenario.latency_slack * scenario.mean_link_latency();
    Ok(ServiceChain {
        model_ids,
        latency_budget,
        sla_completion: scenario.default_sla_completion,
    })
}
