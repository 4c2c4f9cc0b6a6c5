//! The encoder-decoder placement policy.
//!
//! A stacked LSTM encoder turns the chain into per-position source states.
//! The decoder runs one step per position: an LSTM cell over the previously
//! chosen host's embedding, attention over the source states with each
//! position's pre-softmax score multiplied by its Gaussian uncertainty
//! membership, and a linear head over `[decoder state ; context]` producing
//! host logits. Hosts whose remaining nominal capacity cannot take the
//! current model are masked before the softmax.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Placement, Scenario, ServiceChain};
use crate::numerics::{Tape, Tensor, Value};
use crate::uncertainty::{
    fuzzy_membership, oc_feature, oc_score, FuzzyParams, OCParameters, NUM_UNCERTAINTY_FACTORS,
};
use crate::Scalar;

/// Embedding and hidden width shared by every stage of the model.
pub const DEFAULT_EMBED_DIM: usize = 10;
/// Encoder stack depth.
pub const ENCODER_LAYERS: usize = 2;
/// Additive logit offset for masked hosts. Finite so that downstream
/// arithmetic stays NaN-free, large enough that the softmax underflows to
/// exactly zero.
const MASKED_LOGIT: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct LstmWeights<S: Scalar = f64> {
    pub w_input: Tensor<S>,
    pub w_hidden: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> LstmWeights<S> {
    fn new<R: Rng + ?Sized>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        LstmWeights {
            w_input: Tensor::init_uniform(vec![4 * hidden, in_dim], in_dim, rng),
            w_hidden: Tensor::init_uniform(vec![4 * hidden, hidden], hidden, rng),
            bias: Tensor::zeros(vec![4 * hidden], true),
        }
    }
}

/// Every learnable tensor of the policy, value head, and certificate module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct PolicyParameters<S: Scalar = f64> {
    pub embed_dim: usize,
    pub model_embedding: Tensor<S>,
    pub encoder: Vec<LstmWeights<S>>,
    pub decoder: LstmWeights<S>,
    /// Scoring vector applied to the combined attention activation.
    pub attn_score: Tensor<S>,
    /// Projection of the decoder state inside the attention score.
    pub attn_query: Tensor<S>,
    /// Projection of each source state inside the attention score.
    pub attn_key: Tensor<S>,
    pub out_proj: Tensor<S>,
    pub out_bias: Tensor<S>,
    pub start_token: Tensor<S>,
    pub host_embedding: Tensor<S>,
    pub value_hidden_w: Tensor<S>,
    pub value_hidden_b: Tensor<S>,
    pub value_out_w: Tensor<S>,
    pub value_out_b: Tensor<S>,
    pub oc: OCParameters<S>,
    pub fuzzy: FuzzyParams<S>,
}

impl<S: Scalar> PolicyParameters<S> {
    pub fn new<R: Rng + ?Sized>(
        catalog_size: usize,
        n_hosts: usize,
        embed_dim: usize,
        rng: &mut R,
    ) -> Self {
        let e = embed_dim;
        let encoder = (0..ENCODER_LAYERS).map(|_| LstmWeights::new(e, e, rng)).collect();
        PolicyParameters {
            embed_dim: e,
            model_embedding: Tensor::init_uniform(vec![catalog_size, e], e, rng),
            encoder,
            decoder: LstmWeights::new(e, e, rng),
            attn_score: Tensor::init_uniform(vec![e], e, rng),
            attn_query: Tensor::init_uniform(vec![e, e], e, rng),
            attn_key: Tensor::init_uniform(vec![e, e], e, rng),
            out_proj: Tensor::init_uniform(vec![n_hosts, 2 * e], 2 * e, rng),
            out_bias: Tensor::zeros(vec![n_hosts], true),
            start_token: Tensor::init_uniform(vec![e], e, rng),
            host_embedding: Tensor::init_uniform(vec![n_hosts, e], e, rng),
            value_hidden_w: Tensor::init_uniform(vec![e, e], e, rng),
            value_hidden_b: Tensor::zeros(vec![e], true),
            value_out_w: Tensor::init_uniform(vec![1, e], e, rng),
            value_out_b: Tensor::zeros(vec![1], true),
            oc: OCParameters::new(e, rng),
            fuzzy: FuzzyParams::default(),
        }
    }

    /// Sized for a scenario with the default embedding width.
    pub fn for_scenario<R: Rng + ?Sized>(scenario: &Scenario<S>, rng: &mut R) -> Self {
        Self::new(scenario.catalog.len(), scenario.n_hosts(), DEFAULT_EMBED_DIM, rng)
    }

    pub fn n_hosts(&self) -> usize {
        self.out_proj.shape()[0]
    }

    pub fn catalog_size(&self) -> usize {
        self.model_embedding.shape()[0]
    }

    /// Stable-order view of every learnable tensor.
    pub fn tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut list: Vec<(String, &Tensor<S>)> =
            vec![("model_embedding".into(), &self.model_embedding)];
        for (i, layer) in self.encoder.iter().enumerate() {
            list.push((format!("encoder{i}.w_input"), &layer.w_input));
            list.push((format!("encoder{i}.w_hidden"), &layer.w_hidden));
            list.push((format!("encoder{i}.bias"), &layer.bias));
        }
        list.push(("decoder.w_input".into(), &self.decoder.w_input));
        list.push(("decoder.w_hidden".into(), &self.decoder.w_hidden));
        list.push(("decoder.bias".into(), &self.decoder.bias));
        list.push(("attn_score".into(), &self.attn_score));
        list.push(("attn_query".into(), &self.attn_query));
        list.push(("attn_key".into(), &self.attn_key));
        list.push(("out_proj".into(), &self.out_proj));
        list.push(("out_bias".into(), &self.out_bias));
        list.push(("start_token".into(), &self.start_token));
        list.push(("host_embedding".into(), &self.host_embedding));
        list.push(("value_hidden_w".into(), &self.value_hidden_w));
        list.push(("value_hidden_b".into(), &self.value_hidden_b));
        list.push(("value_out_w".into(), &self.value_out_w));
        list.push(("value_out_b".into(), &self.value_out_b));
        list.push(("oc.certificates".into(), &self.oc.certificates));
        list
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut list: Vec<&mut Tensor<S>> = vec![&mut self.model_embedding];
        for layer in &mut self.encoder {
            list.push(&mut layer.w_input);
            list.push(&mut layer.w_hidden);
            list.push(&mut layer.bias);
        }
        list.push(&mut self.decoder.w_input);
        list.push(&mut self.decoder.w_hidden);
        list.push(&mut self.decoder.bias);
        list.push(&mut self.attn_score);
        list.push(&mut self.attn_query);
        list.push(&mut self.attn_key);
        list.push(&mut self.out_proj);
        list.push(&mut self.out_bias);
        list.push(&mut self.start_token);
        list.push(&mut self.host_embedding);
        list.push(&mut self.value_hidden_w);
        list.push(&mut self.value_hidden_b);
        list.push(&mut self.value_out_w);
        list.push(&mut self.value_out_b);
        list.push(&mut self.oc.certificates);
        list
    }

    pub fn clone_tensor_list(&self) -> Vec<Tensor<S>> {
        self.tensors().into_iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn replace_tensor_list(&mut self, tensors: &[Tensor<S>]) {
        let mut slots = self.tensors_mut();
        assert_eq!(slots.len(), tensors.len(), "tensor list length mismatch");
        for (slot, t) in slots.iter_mut().zip(tensors) {
            assert_eq!(slot.shape(), t.shape(), "tensor shape mismatch");
            **slot = t.clone();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    pub fn leaves(&self, tape: &Tape<S>) -> PolicyLeaves {
        PolicyLeaves {
            model_embedding: tape.leaf(&self.model_embedding),
            encoder: self
                .encoder
                .iter()
                .map(|l| LstmLeaves {
                    w_input: tape.leaf(&l.w_input),
                    w_hidden: tape.leaf(&l.w_hidden),
                    bias: tape.leaf(&l.bias),
                })
                .collect(),
            decoder: LstmLeaves {
                w_input: tape.leaf(&self.decoder.w_input),
                w_hidden: tape.leaf(&self.decoder.w_hidden),
                bias: tape.leaf(&self.decoder.bias),
            },
            attn_score: tape.leaf(&self.attn_score),
            attn_query: tape.leaf(&self.attn_query),
            attn_key: tape.leaf(&self.attn_key),
            out_proj: tape.leaf(&self.out_proj),
            out_bias: tape.leaf(&self.out_bias),
            start_token: tape.leaf(&self.start_token),
            host_embedding: tape.leaf(&self.host_embedding),
            value_hidden_w: tape.leaf(&self.value_hidden_w),
            value_hidden_b: tape.leaf(&self.value_hidden_b),
            value_out_w: tape.leaf(&self.value_out_w),
            value_out_b: tape.leaf(&self.value_out_b),
            certificates: tape.leaf(&self.oc.certificates),
        }
    }

    /// Pull the gradients accumulated on the tape's leaves back into the
    /// parameter tensors.
    pub fn accumulate_grads(&mut self, tape: &Tape<S>, leaves: &PolicyLeaves) {
        tape.accumulate_into(leaves.model_embedding, &mut self.model_embedding);
        for (layer, lv) in self.encoder.iter_mut().zip(&leaves.encoder) {
            tape.accumulate_into(lv.w_input, &mut layer.w_input);
            tape.accumulate_into(lv.w_hidden, &mut layer.w_hidden);
            tape.accumulate_into(lv.bias, &mut layer.bias);
        }
        tape.accumulate_into(leaves.decoder.w_input, &mut self.decoder.w_input);
        tape.accumulate_into(leaves.decoder.w_hidden, &mut self.decoder.w_hidden);
        tape.accumulate_into(leaves.decoder.bias, &mut self.decoder.bias);
        tape.accumulate_into(leaves.attn_score, &mut self.attn_score);
        tape.accumulate_into(leaves.attn_query, &mut self.attn_query);
        tape.accumulate_into(leaves.attn_key, &mut self.attn_key);
        tape.accumulate_into(leaves.out_proj, &mut self.out_proj);
        tape.accumulate_into(leaves.out_bias, &mut self.out_bias);
        tape.accumulate_into(leaves.start_token, &mut self.start_token);
        tape.accumulate_into(leaves.host_embedding, &mut self.host_embedding);
        tape.accumulate_into(leaves.value_hidden_w, &mut self.value_hidden_w);
        tape.accumulate_into(leaves.value_hidden_b, &mut self.value_hidden_b);
        tape.accumulate_into(leaves.value_out_w, &mut self.value_out_w);
        tape.accumulate_into(leaves.value_out_b, &mut self.value_out_b);
        tape.accumulate_into(leaves.certificates, &mut self.oc.certificates);
    }
}

pub struct LstmLeaves {
    pub w_input: Value,
    pub w_hidden: Value,
    pub bias: Value,
}

pub struct PolicyLeaves {
    pub model_embedding: Value,
    pub encoder: Vec<LstmLeaves>,
    pub decoder: LstmLeaves,
    pub attn_score: Value,
    pub attn_query: Value,
    pub attn_key: Value,
    pub out_proj: Value,
    pub out_bias: Value,
    pub start_token: Value,
    pub host_embedding: Value,
    pub value_hidden_w: Value,
    pub value_hidden_b: Value,
    pub value_out_w: Value,
    pub value_out_b: Value,
    pub certificates: Value,
}

/// Whether decoding multiplies attention scores by fuzzy memberships or
/// (the uncertainty-blind variant) leaves them untouched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMode {
    Fuzzy,
    Unit,
}

/// How the decoder picks hosts.
#[derive(Clone, Copy, Debug)]
pub enum DecodeMode<'a> {
    /// Draw from the step distribution.
    Sample,
    /// Argmax, lowest index on ties.
    Greedy,
    /// Follow a fixed placement, scoring its log-probability.
    Replay(&'a [usize]),
}

/// Plain-array encoder output.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput<S: Scalar = f64> {
    pub source_states: Vec<Vec<S>>,
    pub pooled: Vec<S>,
    pub oc_features: Vec<Vec<S>>,
}

/// One decoded placement with everything the trainer needs to score it.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeTrace<S: Scalar = f64> {
    pub hosts: Placement,
    pub step_log_probs: Vec<S>,
    pub step_distributions: Vec<Vec<S>>,
    pub memberships: Vec<S>,
    /// True when some step found every host masked and the mask was dropped
    /// for that step.
    pub infeasible_at_decode: bool,
}

/// Encoder graph handles for continued use on the same tape.
pub struct EncodedGraph {
    pub source: Vec<Value>,
    pub pooled: Value,
    pub oc_features: Vec<Value>,
    pub final_h: Value,
    pub final_c: Value,
}

/// Decoder graph handles plus the extracted trace.
pub struct DecodedGraph<S: Scalar = f64> {
    pub log_prob_sum: Value,
    pub entropy_sum: Value,
    pub trace: DecodeTrace<S>,
}

fn lstm_cell<S: Scalar>(
    tape: &Tape<S>,
    weights: &LstmLeaves,
    input: Value,
    h: Value,
    c: Value,
    hidden: usize,
) -> (Value, Value) {
    let pre = tape.add(
        tape.add(tape.matmul(weights.w_input, input), tape.matmul(weights.w_hidden, h)),
        weights.bias,
    );
    let gate_in = tape.sigmoid(tape.slice(pre, 0..hidden));
    let gate_forget = tape.sigmoid(tape.slice(pre, hidden..2 * hidden));
    let cell_cand = tape.tanh(tape.slice(pre, 2 * hidden..3 * hidden));
    let gate_out = tape.sigmoid(tape.slice(pre, 3 * hidden..4 * hidden));
    let c_next = tape.add(tape.mul(gate_forget, c), tape.mul(gate_in, cell_cand));
    let h_next = tape.mul(gate_out, tape.tanh(c_next));
    (h_next, c_next)
}

/// Run the encoder stack on the tape.
pub fn encode_on_tape<S: Scalar>(
    tape: &Tape<S>,
    leaves: &PolicyLeaves,
    params: &PolicyParameters<S>,
    chain: &ServiceChain<S>,
    scenario: &Scenario<S>,
) -> EncodedGraph {
    let e = params.embed_dim;
    let m = chain.len();
    assert!(m >= 1, "chain must have at least one position");
    let maxima = scenario.catalog_maxima();

    let zero = tape.constant(vec![e], vec![S::zero(); e]);
    let mut layer_h = vec![zero; leaves.encoder.len()];
    let mut layer_c = vec![zero; leaves.encoder.len()];
    let mut source = Vec::with_capacity(m);
    let mut oc_features = Vec::with_capacity(m);

    for &model_id in &chain.model_ids {
        assert!(
            model_id < params.catalog_size(),
            "model id {model_id} out of range for catalog of {}",
            params.catalog_size()
        );
        let mut input = tape.row(leaves.model_embedding, model_id);
        for (layer, weights) in leaves.encoder.iter().enumerate() {
            let (h, c) = lstm_cell(tape, weights, input, layer_h[layer], layer_c[layer], e);
            layer_h[layer] = h;
            layer_c[layer] = c;
            input = h;
        }
        let top = *layer_h.last().unwrap();
        source.push(top);

        let profile = &scenario.catalog[model_id];
        let stats = tape.constant(
            vec![NUM_UNCERTAINTY_FACTORS],
            vec![
                profile.nominal_cpu / maxima.cpu,
                profile.nominal_gpu / maxima.gpu,
                profile.nominal_disk / maxima.disk,
                profile.nominal_completion_rate / maxima.completion,
            ],
        );
        oc_features.push(tape.concat_vec(&[top, stats]));
    }

    let mut pooled = source[0];
    for &s in &source[1..] {
        pooled = tape.add(pooled, s);
    }
    let pooled = tape.scale(pooled, S::one() / S::of(m as f64));

    EncodedGraph {
        source,
        pooled,
        oc_features,
        final_h: *layer_h.last().unwrap(),
        final_c: *layer_c.last().unwrap(),
    }
}

/// Per-position fuzzy memberships on the tape, differentiable through the
/// certificates.
pub fn memberships_on_tape<S: Scalar>(
    tape: &Tape<S>,
    leaves: &PolicyLeaves,
    encoded: &EncodedGraph,
    fuzzy: &FuzzyParams<S>,
) -> Vec<Value> {
    let cert_t = tape.transpose(leaves.certificates);
    let inv_d = S::one() / S::of(NUM_UNCERTAINTY_FACTORS as f64);
    let mu = tape.constant_scalar(fuzzy.mu);
    encoded
        .oc_features
        .iter()
        .map(|&feat| {
            let response = tape.matmul(cert_t, feat);
            let score = tape.scale(tape.squared_norm(response), inv_d);
            let dev = tape.sub(score, mu);
            let exponent = tape.scale(tape.mul(dev, dev), -S::one() / fuzzy.sigma_sq);
            tape.exp(exponent)
        })
        .collect()
}

/// Value head on the tape: one tanh hidden layer over the pooled encoding.
pub fn value_on_tape<S: Scalar>(tape: &Tape<S>, leaves: &PolicyLeaves, pooled: Value) -> Value {
    let hidden = tape.tanh(tape.add(
        tape.matmul(leaves.value_hidden_w, pooled),
        leaves.value_hidden_b,
    ));
    tape.add(tape.matmul(leaves.value_out_w, hidden), leaves.value_out_b)
}

/// Nominal per-host capacity tracker for the decode-time mask.
struct MaskState<S: Scalar> {
    cpu: Vec<S>,
    gpu: Vec<S>,
    disk: Vec<S>,
}

impl<S: Scalar> MaskState<S> {
    fn new(scenario: &Scenario<S>) -> Self {
        MaskState {
            cpu: scenario.hosts.iter().map(|h| h.cpu_capacity).collect(),
            gpu: scenario.hosts.iter().map(|h| h.gpu_capacity).collect(),
            disk: scenario.hosts.iter().map(|h| h.disk_capacity).collect(),
        }
    }

    fn fits(&self, host: usize, profile: &crate::domain::AIModelProfile<S>) -> bool {
        self.cpu[host] >= profile.nominal_cpu
            && self.gpu[host] >= profile.nominal_gpu
            && self.disk[host] >= profile.nominal_disk
    }

    fn commit(&mut self, host: usize, profile: &crate::domain::AIModelProfile<S>) {
        self.cpu[host] = self.cpu[host] - profile.nominal_cpu;
        self.gpu[host] = self.gpu[host] - profile.nominal_gpu;
        self.disk[host] = self.disk[host] - profile.nominal_disk;
    }
}

/// Run the decoder on the tape.
pub fn decode_on_tape<S: Scalar, R: Rng + ?Sized>(
    tape: &Tape<S>,
    leaves: &PolicyLeaves,
    encoded: &EncodedGraph,
    params: &PolicyParameters<S>,
    chain: &ServiceChain<S>,
    scenario: &Scenario<S>,
    uncertainty: UncertaintyMode,
    mode: DecodeMode,
    rng: &mut R,
) -> DecodedGraph<S> {
    let m = chain.len();
    let n = scenario.n_hosts();
    assert_eq!(params.n_hosts(), n, "policy sized for {} hosts, scenario has {n}", params.n_hosts());

    let membership_values: Vec<Value> = match uncertainty {
        UncertaintyMode::Fuzzy => memberships_on_tape(tape, leaves, encoded, &params.fuzzy),
        UncertaintyMode::Unit => Vec::new(),
    };
    let memberships: Vec<S> = match uncertainty {
        UncertaintyMode::Fuzzy => {
            membership_values.iter().map(|&v| tape.value_scalar(v)).collect()
        }
        UncertaintyMode::Unit => vec![S::one(); m],
    };

    // position-independent pieces of the attention score
    let keys: Vec<Value> =
        encoded.source.iter().map(|&s| tape.matmul(leaves.attn_key, s)).collect();
    let source_matrix_t = tape.transpose(tape.stack_rows(&encoded.source)); // [e, m]

    let mut mask_state = MaskState::new(scenario);
    let mut h = encoded.final_h;
    let mut c = encoded.final_c;
    let mut prev_input = leaves.start_token;

    let mut chosen = Vec::with_capacity(m);
    let mut step_log_probs = Vec::with_capacity(m);
    let mut step_distributions = Vec::with_capacity(m);
    let mut log_prob_sum: Option<Value> = None;
    let mut entropy_sum: Option<Value> = None;
    let mut infeasible_at_decode = false;

    for v in 0..m {
        let (h_next, c_next) = lstm_cell(tape, &leaves.decoder, prev_input, h, c, params.embed_dim);
        h = h_next;
        c = c_next;

        let query = tape.matmul(leaves.attn_query, h);
        let scores: Vec<Value> = (0..m)
            .map(|a| {
                let combined = tape.tanh(tape.add(query, keys[a]));
                let raw = tape.dot(leaves.attn_score, combined);
                match uncertainty {
                    UncertaintyMode::Fuzzy => tape.mul(raw, membership_values[a]),
                    UncertaintyMode::Unit => raw,
                }
            })
            .collect();
        let weights = tape.softmax(tape.concat_vec(&scores));
        let context = tape.matmul(source_matrix_t, weights);

        let joint = tape.concat_vec(&[h, context]);
        let logits = tape.add(tape.matmul(leaves.out_proj, joint), leaves.out_bias);

        let profile = &scenario.catalog[chain.model_ids[v]];
        let mut mask = vec![S::zero(); n];
        let mut any_open = false;
        for host in 0..n {
            if mask_state.fits(host, profile) {
                any_open = true;
            } else {
                mask[host] = S::of(MASKED_LOGIT);
            }
        }
        if !any_open {
            // nothing fits even nominally: drop the mask for this step and
            // let the environment judge the result
            infeasible_at_decode = true;
            mask.iter_mut().for_each(|x| *x = S::zero());
        }
        let masked = tape.add(logits, tape.constant(vec![n], mask.clone()));
        let dist = tape.softmax(masked);
        let dist_values = tape.values(dist);

        let pick = match mode {
            DecodeMode::Greedy => argmax(&dist_values),
            DecodeMode::Sample => sample_index(&dist_values, rng),
            DecodeMode::Replay(hosts) => {
                assert_eq!(hosts.len(), m, "replayed placement length mismatch");
                hosts[v]
            }
        };

        let lse = tape.logsumexp(masked);
        let log_prob = tape.sub(tape.slice(masked, pick..pick + 1), lse);
        let shifted = tape.sub_scalar(masked, lse);
        let entropy = tape.neg(tape.sum(tape.mul(dist, shifted)));

        log_prob_sum = Some(match log_prob_sum {
            Some(acc) => tape.add(acc, log_prob),
            None => log_prob,
        });
        entropy_sum = Some(match entropy_sum {
            Some(acc) => tape.add(acc, entropy),
            None => entropy,
        });

        step_log_probs.push(tape.value_scalar(log_prob));
        step_distributions.push(dist_values);
        chosen.push(pick);
        mask_state.commit(pick, profile);
        prev_input = tape.row(leaves.host_embedding, pick);
    }

    DecodedGraph {
        log_prob_sum: log_prob_sum.expect("m >= 1"),
        entropy_sum: entropy_sum.expect("m >= 1"),
        trace: DecodeTrace {
            hosts: Placement::new(chosen),
            step_log_probs,
            step_distributions,
            memberships,
            infeasible_at_decode,
        },
    }
}

fn argmax<S: Scalar>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn sample_index<S: Scalar, R: Rng + ?Sized>(probs: &[S], rng: &mut R) -> usize {
    let draw = S::unit_uniform(rng);
    let mut cumulative = S::zero();
    for (i, &p) in probs.iter().enumerate() {
        cumulative = cumulative + p;
        if draw < cumulative {
            return i;
        }
    }
    // rounding left the cumulative just under the draw: fall back to the mode
    argmax(probs)
}

/// Encode a chain and extract plain arrays.
pub fn encode<S: Scalar>(
    chain: &ServiceChain<S>,
    scenario: &Scenario<S>,
    params: &PolicyParameters<S>,
) -> EncoderOutput<S> {
    let tape: Tape<S> = Tape::new();
    let leaves = params.leaves(&tape);
    let graph = encode_on_tape(&tape, &leaves, params, chain, scenario);
    EncoderOutput {
        source_states: graph.source.iter().map(|&v| tape.values(v)).collect(),
        pooled: tape.values(graph.pooled),
        oc_features: graph.oc_features.iter().map(|&v| tape.values(v)).collect(),
    }
}

/// Encode and decode a chain end to end on a fresh tape.
pub fn decode<S: Scalar, R: Rng + ?Sized>(
    chain: &ServiceChain<S>,
    scenario: &Scenario<S>,
    params: &PolicyParameters<S>,
    uncertainty: UncertaintyMode,
    mode: DecodeMode,
    rng: &mut R,
) -> DecodeTrace<S> {
    let tape: Tape<S> = Tape::new();
    let leaves = params.leaves(&tape);
    let encoded = encode_on_tape(&tape, &leaves, params, chain, scenario);
    decode_on_tape(&tape, &leaves, &encoded, params, chain, scenario, uncertainty, mode, rng)
        .trace
}

/// Scalar baseline from the pooled encoder state.
pub fn value_estimate<S: Scalar>(
    encoder_out: &EncoderOutput<S>,
    params: &PolicyParameters<S>,
) -> S {
    let tape: Tape<S> = Tape::new();
    let leaves = params.leaves(&tape);
    let pooled = tape.constant(vec![encoder_out.pooled.len()], encoder_out.pooled.clone());
    tape.value_scalar(value_on_tape(&tape, &leaves, pooled))
}

fn raw_alignment_scores<S: Scalar>(
    decoder_state: &[S],
    source_states: &[Vec<S>],
    params: &PolicyParameters<S>,
) -> Vec<S> {
    let e = params.embed_dim;
    assert_eq!(decoder_state.len(), e, "decoder state width {} vs {e}", decoder_state.len());
    let qw = params.attn_query.values();
    let kw = params.attn_key.values();
    let omega = params.attn_score.values();
    let mut query = vec![S::zero(); e];
    for i in 0..e {
        for j in 0..e {
            query[i] = query[i] + qw[i * e + j] * decoder_state[j];
        }
    }
    source_states
        .iter()
        .map(|src| {
            assert_eq!(src.len(), e, "source state width {} vs {e}", src.len());
            let mut score = S::zero();
            for i in 0..e {
                let mut key = S::zero();
                for j in 0..e {
                    key = key + kw[i * e + j] * src[j];
                }
                score = score + omega[i] * (query[i] + key).tanh();
            }
            score
        })
        .collect()
}

fn softmax_plain<S: Scalar>(scores: &[S]) -> Vec<S> {
    let max = scores.iter().cloned().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = scores.iter().map(|&x| (x - max).exp()).collect();
    let total: S = exps.iter().cloned().sum();
    exps.iter().map(|&x| x / total).collect()
}

/// Attention weights over the source states for one decoder state.
pub fn alignment<S: Scalar>(
    decoder_state: &[S],
    source_states: &[Vec<S>],
    params: &PolicyParameters<S>,
) -> Vec<S> {
    softmax_plain(&raw_alignment_scores(decoder_state, source_states, params))
}

/// Attention weights with each pre-softmax score multiplied by the
/// position's membership.
pub fn fused_alignment<S: Scalar>(
    decoder_state: &[S],
    source_states: &[Vec<S>],
    memberships: &[S],
    params: &PolicyParameters<S>,
) -> Vec<S> {
    assert_eq!(
        memberships.len(),
        source_states.len(),
        "membership count {} vs {} source states",
        memberships.len(),
        source_states.len()
    );
    let scores: Vec<S> = raw_alignment_scores(decoder_state, source_states, params)
        .into_iter()
        .zip(memberships)
        .map(|(s, &f)| s * f)
        .collect();
    softmax_plain(&scores)
}

/// Convex combination of source states under the given weights.
pub fn context<S: Scalar>(weights: &[S], source_states: &[Vec<S>]) -> Vec<S> {
    assert_eq!(
        weights.len(),
        source_states.len(),
        "weight count {} vs {} source states",
        weights.len(),
        source_states.len()
    );
    let e = source_states[0].len();
    let mut out = vec![S::zero(); e];
    for (w, src) in weights.iter().zip(source_states) {
        for i in 0..e {
            out[i] = out[i] + *w * src[i];
        }
    }
    out
}

/// Fuzzy membership of each chain position, from the certificate score of
/// its encoder feature.
pub fn trace_memberships<S: Scalar>(
    encoder_out: &EncoderOutput<S>,
    params: &PolicyParameters<S>,
) -> Vec<S> {
    encoder_out
        .oc_features
        .iter()
        .map(|f| fuzzy_membership(oc_score(&params.oc, f).expect("dims agree"), &params.fuzzy))
        .collect()
}

/// Convenience for tests and feature plumbing: the oc feature of a single
/// profile under this scenario's normalization.
pub fn profile_feature<S: Scalar>(
    embedding: &[S],
    model_id: usize,
    scenario: &Scenario<S>,
) -> Vec<S> {
    oc_feature(embedding, &scenario.catalog[model_id], &scenario.catalog_maxima())
}
