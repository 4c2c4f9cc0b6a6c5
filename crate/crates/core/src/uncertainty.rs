//! Epistemic uncertainty: realization sampling, the linear certificate
//! estimator, and the Gaussian membership that turns scores into weights.
//!
//! The certificate matrix is trained to send in-distribution features toward
//! zero under an orthonormality penalty; the mean squared certificate
//! response of a feature is its unfamiliarity score.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{generate_request, AIModelProfile, CatalogMaxima, Scenario, ServiceChain};
use crate::evaluator::{FactorQuad, RealizedDemand};
use crate::numerics::{Adam, Tape, Tensor, Value};
use crate::Scalar;

/// Number of tracked uncertainty factors (cpu, gpu, disk, completion).
pub const NUM_UNCERTAINTY_FACTORS: usize = 4;

#[derive(Debug, Error)]
pub enum UncertaintyError {
    #[error("model id {model} out of range for catalog of {n_models}")]
    ModelOutOfRange { model: usize, n_models: usize },
    #[error("catalog model {model} has zero nominal {quantity}; cannot form a factor")]
    ZeroNominal { model: usize, quantity: &'static str },
    #[error("feature length {got} does not match certificate rows {expected}")]
    FeatureDimMismatch { got: usize, expected: usize },
    #[error("certificate training needs a nonempty feature batch")]
    EmptyBatch,
}

/// Sample a realization for a chain. Per position, in order: the cpu/gpu
/// delta, the disk delta, the completion delta. Additive catalog deltas are
/// converted to multiplicative factors against the nominal values.
pub fn draw_realization<S: Scalar, R: Rng + ?Sized>(
    chain: &ServiceChain<S>,
    scenario: &Scenario<S>,
    rng: &mut R,
) -> Result<RealizedDemand<S>, UncertaintyError> {
    let mut factors = Vec::with_capacity(chain.len());
    for &id in &chain.model_ids {
        let profile = scenario.catalog.get(id).ok_or(UncertaintyError::ModelOutOfRange {
            model: id,
            n_models: scenario.catalog.len(),
        })?;
        if profile.nominal_cpu == S::zero() {
            return Err(UncertaintyError::ZeroNominal { model: id, quantity: "cpu" });
        }
        if profile.nominal_disk == S::zero() {
            return Err(UncertaintyError::ZeroNominal { model: id, quantity: "disk" });
        }
        if profile.nominal_completion_rate == S::zero() {
            return Err(UncertaintyError::ZeroNominal { model: id, quantity: "completion" });
        }
        let delta = profile.cpu_gpu_delta_dist.sample(rng);
        let theta = profile.disk_delta_dist.sample(rng);
        let upsilon = profile.completion_delta_dist.sample(rng);
        let f_compute = (profile.nominal_cpu + delta) / profile.nominal_cpu;
        factors.push(FactorQuad {
            f_cpu: f_compute,
            f_gpu: f_compute,
            f_disk: (profile.nominal_disk + theta) / profile.nominal_disk,
            f_completion: (profile.nominal_completion_rate + upsilon)
                / profile.nominal_completion_rate,
        });
    }
    Ok(RealizedDemand { factors })
}

/// Linear certificate map: `(e + 4) x 4`, trained to zero out familiar
/// features while keeping near-orthonormal columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct OCParameters<S: Scalar = f64> {
    pub certificates: Tensor<S>,
    pub orthonormality_weight: S,
}

impl<S: Scalar> OCParameters<S> {
    pub fn new<R: Rng + ?Sized>(embed_dim: usize, rng: &mut R) -> Self {
        let rows = embed_dim + NUM_UNCERTAINTY_FACTORS;
        OCParameters {
            certificates: Tensor::init_uniform(vec![rows, NUM_UNCERTAINTY_FACTORS], rows, rng),
            orthonormality_weight: S::one(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.certificates.shape()[0]
    }
}

/// Gaussian membership parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct FuzzyParams<S: Scalar = f64> {
    pub mu: S,
    pub sigma_sq: S,
}

impl<S: Scalar> Default for FuzzyParams<S> {
    fn default() -> Self {
        FuzzyParams { mu: S::zero(), sigma_sq: S::one() }
    }
}

/// `exp(-(u - mu)^2 / sigma^2)`, in (0, 1].
pub fn fuzzy_membership<S: Scalar>(u: S, params: &FuzzyParams<S>) -> S {
    assert!(params.sigma_sq > S::zero(), "sigma_sq must be positive, got {}", params.sigma_sq);
    let d = u - params.mu;
    (-(d * d) / params.sigma_sq).exp()
}

/// Certificate feature: the position's encoder state concatenated with the
/// model's four nominal statistics, each normalized by its catalog maximum.
pub fn oc_feature<S: Scalar>(
    embedding: &[S],
    profile: &AIModelProfile<S>,
    maxima: &CatalogMaxima<S>,
) -> Vec<S> {
    let mut feature = Vec::with_capacity(embedding.len() + NUM_UNCERTAINTY_FACTORS);
    feature.extend_from_slice(embedding);
    feature.push(profile.nominal_cpu / maxima.cpu);
    feature.push(profile.nominal_gpu / maxima.gpu);
    feature.push(profile.nominal_disk / maxima.disk);
    feature.push(profile.nominal_completion_rate / maxima.completion);
    feature
}

/// Unfamiliarity score: mean squared certificate response.
pub fn oc_score<S: Scalar>(
    params: &OCParameters<S>,
    feature: &[S],
) -> Result<S, UncertaintyError> {
    let rows = params.feature_dim();
    if feature.len() != rows {
        return Err(UncertaintyError::FeatureDimMismatch { got: feature.len(), expected: rows });
    }
    let c = params.certificates.values();
    let mut total = S::zero();
    for j in 0..NUM_UNCERTAINTY_FACTORS {
        let mut response = S::zero();
        for (i, &x) in feature.iter().enumerate() {
            response = response + c[i * NUM_UNCERTAINTY_FACTORS + j] * x;
        }
        total = total + response * response;
    }
    Ok(total / S::of(NUM_UNCERTAINTY_FACTORS as f64))
}

/// Tape version of the certificate loss:
/// `mean_b ||C^T x_b||^2 + weight * ||C^T C - I||_F^2`.
pub fn oc_loss_on_tape<S: Scalar>(
    tape: &Tape<S>,
    certificates: Value,
    features: &[Vec<S>],
    weight: S,
    feature_dim: usize,
) -> Result<Value, UncertaintyError> {
    if features.is_empty() {
        return Err(UncertaintyError::EmptyBatch);
    }
    for f in features {
        if f.len() != feature_dim {
            return Err(UncertaintyError::FeatureDimMismatch {
                got: f.len(),
                expected: feature_dim,
            });
        }
    }
    let batch = features.len();
    let flat: Vec<S> = features.iter().flatten().cloned().collect();
    let x = tape.constant(vec![batch, feature_dim], flat);
    let responses = tape.matmul(x, certificates); // [batch, d_u]
    let data_term = tape.scale(tape.squared_norm(responses), S::one() / S::of(batch as f64));

    let gram = tape.matmul(tape.transpose(certificates), certificates); // [d_u, d_u]
    let mut identity = vec![S::zero(); NUM_UNCERTAINTY_FACTORS * NUM_UNCERTAINTY_FACTORS];
    for j in 0..NUM_UNCERTAINTY_FACTORS {
        identity[j * NUM_UNCERTAINTY_FACTORS + j] = S::one();
    }
    let eye = tape.constant(
        vec![NUM_UNCERTAINTY_FACTORS, NUM_UNCERTAINTY_FACTORS],
        identity,
    );
    let diff = tape.sub(gram, eye);
    let penalty = tape.scale(tape.squared_norm(diff), weight);
    Ok(tape.add(data_term, penalty))
}

/// Certificate loss for a feature batch.
pub fn oc_loss<S: Scalar>(
    params: &OCParameters<S>,
    features: &[Vec<S>],
) -> Result<S, UncertaintyError> {
    let tape: Tape<S> = Tape::new();
    let cert = tape.leaf(&params.certificates);
    let loss = oc_loss_on_tape(
        &tape,
        cert,
        features,
        params.orthonormality_weight,
        params.feature_dim(),
    )?;
    Ok(tape.value_scalar(loss))
}

/// `||C^T C - I||_F`, the orthonormality residual.
pub fn orthonormality_residual<S: Scalar>(params: &OCParameters<S>) -> S {
    let c = params.certificates.values();
    let rows = params.feature_dim();
    let d = NUM_UNCERTAINTY_FACTORS;
    let mut total = S::zero();
    for j in 0..d {
        for k in 0..d {
            let mut dot = S::zero();
            for i in 0..rows {
                dot = dot + c[i * d + j] * c[i * d + k];
            }
            let target = if j == k { S::one() } else { S::zero() };
            total = total + (dot - target) * (dot - target);
        }
    }
    total.sqrt()
}

/// Schedule and data for certificate training.
#[derive(Clone, Debug)]
pub struct OcTrainConfig {
    pub samples: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub chain_length: usize,
}

impl Default for OcTrainConfig {
    fn default() -> Self {
        OcTrainConfig {
            samples: 10_000,
            steps: 2_000,
            batch_size: 64,
            learning_rate: 3e-3,
            chain_length: 8,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OcTrainReport<S: Scalar = f64> {
    pub final_loss: S,
    pub orthonormality_residual: S,
    pub mean_in_distribution_score: S,
}

/// Collect encoder features for random catalog chains.
pub fn collect_features<S: Scalar, R: Rng + ?Sized>(
    scenario: &Scenario<S>,
    policy: &crate::policy::PolicyParameters<S>,
    samples: usize,
    chain_length: usize,
    rng: &mut R,
) -> Vec<Vec<S>> {
    let mut features = Vec::with_capacity(samples);
    while features.len() < samples {
        let chain = generate_request(scenario, chain_length, rng).expect("nonempty catalog");
        let encoded = crate::policy::encode(&chain, scenario, policy);
        for row in encoded.oc_features {
            if features.len() == samples {
                break;
            }
            features.push(row);
        }
    }
    features
}

/// Train the certificates on in-distribution features until the schedule is
/// exhausted. The policy's other parameters are left untouched.
pub fn train_certificates<S: Scalar, R: Rng + ?Sized>(
    scenario: &Scenario<S>,
    policy: &mut crate::policy::PolicyParameters<S>,
    cfg: &OcTrainConfig,
    rng: &mut R,
) -> OcTrainReport<S> {
    let features = collect_features(scenario, policy, cfg.samples, cfg.chain_length, rng);
    let mut adam: Adam<S> = Adam::new(S::of(cfg.learning_rate));
    let mut last_loss = S::zero();
    for _ in 0..cfg.steps {
        let batch: Vec<Vec<S>> = (0..cfg.batch_size)
            .map(|_| features[rng.random_range(0..features.len())].clone())
            .collect();
        let tape: Tape<S> = Tape::new();
        let cert = tape.leaf(&policy.oc.certificates);
        let loss = oc_loss_on_tape(
            &tape,
            cert,
            &batch,
            policy.oc.orthonormality_weight,
            policy.oc.feature_dim(),
        )
        .expect("batch is nonempty and well-shaped");
        tape.backward(loss);
        tape.accumulate_into(cert, &mut policy.oc.certificates);
        adam.step(&mut [&mut policy.oc.certificates]).expect("certificates are tracked");
        last_loss = tape.value_scalar(loss);
    }
    let mean_score = {
        let mut total = S::zero();
        for f in &features {
            total = total + oc_score(&policy.oc, f).expect("dims agree");
        }
        total / S::of(features.len() as f64)
    };
    OcTrainReport {
        final_loss: last_loss,
        orthonormality_residual: orthonormality_residual(&policy.oc),
        mean_in_distribution_score: mean_score,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DistributionSpec;
    use crate::numerics::{central_difference, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hosts10() -> Scenario {
        Scenario::builtin("hosts10").unwrap()
    }

    fn chain_of(scenario: &Scenario, ids: &[usize]) -> ServiceChain {
        let compute: f64 = ids.iter().map(|&i| scenario.catalog[i].compute_latency).sum();
        ServiceChain {
            model_ids: ids.to_vec(),
            latency_budget: compute + ids.len() as f64 * scenario.mean_link_latency(),
            sla_completion: scenario.default_sla_completion,
        }
    }

    #[test]
    fn zero_deltas_give_unit_factors() {
        let mut s = hosts10();
        for m in &mut s.catalog {
            m.cpu_gpu_delta_dist = DistributionSpec::uniform(0.0, 0.0, 0.0, 0.0);
            m.disk_delta_dist = DistributionSpec::uniform(0.0, 0.0, 0.0, 0.0);
            m.completion_delta_dist = DistributionSpec::uniform(0.0, 0.0, 0.0, 0.0);
        }
        let chain = chain_of(&s, &[0, 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let realized = draw_realization(&chain, &s, &mut rng).unwrap();
        for f in &realized.factors {
            assert_eq!(
                (f.f_cpu, f.f_gpu, f.f_disk, f.f_completion),
                (1.0, 1.0, 1.0, 1.0)
            );
        }
    }

    #[test]
    fn pinned_deltas_give_hand_computed_factors() {
        let mut s = hosts10();
        // delta = 1 on nominal cpu 4: factor (4+1)/4
        s.catalog[0].cpu_gpu_delta_dist = DistributionSpec::uniform(1.0, 1.0, 1.0, 1.0);
        // upsilon = 15 on nominal completion 80: factor 95/80
        s.catalog[0].completion_delta_dist = DistributionSpec::uniform(15.0, 15.0, 15.0, 15.0);
        let chain = chain_of(&s, &[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let realized = draw_realization(&chain, &s, &mut rng).unwrap();
        assert!((realized.factors[0].f_cpu - 1.25).abs() < 1e-15);
        assert!((realized.factors[0].f_gpu - 1.25).abs() < 1e-15);
        assert!((realized.factors[0].f_completion - 1.1875).abs() < 1e-15);
    }

    #[test]
    fn draws_are_bit_reproducible() {
        let s = hosts10();
        let chain = chain_of(&s, &[0, 1, 2, 3, 4, 5, 6, 7]);
        let draw = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            draw_realization(&chain, &s, &mut rng).unwrap()
        };
        let (a, b) = (draw(99), draw(99));
        for (x, y) in a.factors.iter().zip(&b.factors) {
            assert_eq!(x.f_cpu.to_bits(), y.f_cpu.to_bits());
            assert_eq!(x.f_disk.to_bits(), y.f_disk.to_bits());
            assert_eq!(x.f_completion.to_bits(), y.f_completion.to_bits());
        }
    }

    #[test]
    fn zero_nominal_is_a_division_guard_error() {
        let mut s = hosts10();
        s.catalog[0].nominal_cpu = 0.0;
        let chain = ServiceChain { model_ids: vec![0], latency_budget: 1e9, sla_completion: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            draw_realization(&chain, &s, &mut rng),
            Err(UncertaintyError::ZeroNominal { quantity: "cpu", .. })
        ));
    }

    #[test]
    fn oc_feature_normalizes_against_catalog_maxima() {
        let s = hosts10();
        let maxima = s.catalog_maxima();
        // catalog-max stats with a zero embedding: (0, .., 0, 1, 1, 1, 1)
        let zero_emb = vec![0.0; 10];
        let top = oc_feature(&zero_emb, &s.catalog[0], &maxima);
        assert_eq!(top.len(), 14);
        assert_eq!(&top[10..], &[1.0, 1.0, 1.0, 1.0]);
        // table model 7 has cpu 1 against a maximum of 4
        let small = oc_feature(&zero_emb, &s.catalog[6], &maxima);
        assert_eq!(small[10], 0.25);
        // length is embedding length + 4 for any embedding
        let emb3 = vec![0.5; 3];
        assert_eq!(oc_feature(&emb3, &s.catalog[2], &maxima).len(), 7);
    }

    #[test]
    fn oc_score_identity_block() {
        // first four rows of C form the identity: score of a feature whose
        // first four slots are ones is 4/4 = 1
        let mut values = vec![0.0; 14 * 4];
        for j in 0..4 {
            values[j * 4 + j] = 1.0;
        }
        let params = OCParameters {
            certificates: Tensor::new(vec![14, 4], values, true),
            orthonormality_weight: 1.0,
        };
        let mut feature = vec![0.0; 14];
        feature[..4].copy_from_slice(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(oc_score(&params, &feature).unwrap(), 1.0);
        // zero response scores zero
        assert_eq!(oc_score(&params, &vec![0.0; 14]).unwrap(), 0.0);
        // wrong dimension is an error
        assert!(matches!(
            oc_score(&params, &vec![0.0; 13]),
            Err(UncertaintyError::FeatureDimMismatch { .. })
        ));
    }

    #[test]
    fn oc_loss_zero_certificates_equals_weight_times_d() {
        let params = OCParameters::<f64> {
            certificates: Tensor::zeros(vec![14, 4], true),
            orthonormality_weight: 1.0,
        };
        let features = vec![vec![0.3; 14], vec![-0.2; 14]];
        let loss = oc_loss(&params, &features).unwrap();
        assert!((loss - 4.0).abs() < 1e-12, "{loss}");
        // duplicating the batch cannot change a mean
        let doubled: Vec<Vec<f64>> =
            features.iter().chain(features.iter()).cloned().collect();
        assert!((oc_loss(&params, &doubled).unwrap() - loss).abs() < 1e-12);
    }

    #[test]
    fn oc_loss_orthonormal_dead_certificates_is_zero() {
        // orthonormal columns supported on feature slots that are always
        // zero: both loss terms vanish
        let mut values = vec![0.0; 14 * 4];
        for j in 0..4 {
            values[(10 + j) * 4 + j] = 1.0;
        }
        let params = OCParameters::<f64> {
            certificates: Tensor::new(vec![14, 4], values, true),
            orthonormality_weight: 1.0,
        };
        let mut feature = vec![0.7; 14];
        feature[10..].fill(0.0);
        let loss = oc_loss(&params, &[feature.clone()]).unwrap();
        assert!(loss.abs() < 1e-12, "{loss}");
        assert_eq!(oc_score(&params, &feature).unwrap(), 0.0);
    }

    #[test]
    fn oc_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = OCParameters::<f64>::new(6, &mut rng);
        let features: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..10).map(|_| f64::standard_normal(&mut rng)).collect())
            .collect();

        let tape: Tape = Tape::new();
        let cert = tape.leaf(&params.certificates);
        let loss = oc_loss_on_tape(&tape, cert, &features, 1.0, 10).unwrap();
        tape.backward(loss);
        let analytic = tape.grad(cert);

        let mut f = |ts: &[Tensor<f64>]| {
            let p = OCParameters { certificates: ts[0].clone(), orthonormality_weight: 1.0 };
            oc_loss(&p, &features).unwrap()
        };
        let fd = central_difference(&mut f, &[params.certificates.clone()], 1e-4);
        for (i, (&a, &r)) in analytic.iter().zip(&fd[0]).enumerate() {
            assert!(relative_error(a, r) < 1e-3, "slot {i}: {a} vs {r}");
        }
    }

    #[test]
    fn membership_examples() {
        let params = FuzzyParams::<f64> { mu: 0.5, sigma_sq: 4.0 };
        assert_eq!(fuzzy_membership(0.5, &params), 1.0);
        // u = mu + sigma gives exactly exp(-1)
        let sigma = params.sigma_sq.sqrt();
        let e_inv = fuzzy_membership(0.5 + sigma, &params);
        assert!((e_inv - (-1.0f64).exp()).abs() < 1e-12);
        // symmetric about mu, decreasing in |u - mu|, into (0, 1]
        for d in [0.1, 0.7, 2.0, 10.0] {
            let lo = fuzzy_membership(0.5 - d, &params);
            let hi = fuzzy_membership(0.5 + d, &params);
            assert!((lo - hi).abs() < 1e-12);
            assert!(hi > 0.0 && hi <= 1.0);
            assert!(hi < fuzzy_membership(0.5 + d / 2.0, &params));
        }
    }
}
