use serde::{Deserialize, Serialize};

use super::losses::LossSums;
use super::params::{AttentionInput, ModelParams};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::data::Journey;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub mode: Mode,
    pub dropout_seed: u64,
    /// Backward scale of the gradient-reversal node; `None` uses the model's
    /// lambda. Passing `Some(-1.0)` turns the node into a plain identity.
    pub reversal_scale: Option<f64>,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        ForwardOptions {
            mode: Mode::Eval,
            dropout_seed: 0,
            reversal_scale: None,
        }
    }

    pub fn train(dropout_seed: u64) -> Self {
        ForwardOptions {
            mode: Mode::Train,
            dropout_seed,
            reversal_scale: None,
        }
    }
}

/// Model outputs for one journey.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    /// Attention weight of each touchpoint; sums to 1.
    pub attention: Vec<f64>,
    /// Predicted click probability of each touchpoint.
    pub click_probs: Vec<f64>,
    /// Channel-head propensities at each touchpoint.
    pub channel_propensities: Vec<Vec<f64>>,
    pub conversion_prob: f64,
}

/// Journeys padded to a common length, laid out step-major.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub steps: usize,
    pub lengths: Vec<usize>,
    /// `[step][field]` -> per-row covariate indices.
    covariates: Vec<Vec<Vec<usize>>>,
    /// `[step]` -> per-row channel index (0 on padding).
    channels: Vec<Vec<usize>>,
    /// `[step]` -> per-row click label.
    clicks: Vec<Vec<f64>>,
    /// `[step]` -> per-row validity as a 0/1 weight.
    weights: Vec<Vec<f64>>,
    converted: Vec<f64>,
}

impl Batch {
    pub fn new(journeys: &[&Journey], params: &ModelParams) -> Result<Self> {
        let h = &params.hyper;
        if journeys.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        for j in journeys {
            j.validate(h.num_channels, h.max_len, &h.cardinalities)?;
        }
        let size = journeys.len();
        let steps = journeys.iter().map(|j| j.len()).max().unwrap_or(0);
        let fields = h.cardinalities.len();
        let mut b = Batch {
            size,
            steps,
            lengths: journeys.iter().map(|j| j.len()).collect(),
            covariates: vec![vec![vec![0; size]; fields]; steps],
            channels: vec![vec![0; size]; steps],
            clicks: vec![vec![0.0; size]; steps],
            weights: vec![vec![0.0; size]; steps],
            converted: journeys.iter().map(|j| if j.converted { 1.0 } else { 0.0 }).collect(),
        };
        for (n, j) in journeys.iter().enumerate() {
            for (t, tp) in j.touchpoints.iter().enumerate() {
                for f in 0..fields {
                    b.covariates[t][f][n] = tp.covariates[f];
                }
                b.channels[t][n] = tp.channel;
                b.clicks[t][n] = if tp.click { 1.0 } else { 0.0 };
                b.weights[t][n] = 1.0;
            }
        }
        Ok(b)
    }

    fn mask(&self, t: usize, n: usize) -> bool {
        self.weights[t][n] > 0.0
    }

    fn one_hot(&self, t: usize, k: usize) -> Tensor {
        let mut data = vec![0.0; self.size * k];
        for n in 0..self.size {
            if self.mask(t, n) {
                data[n * k + self.channels[t][n]] = 1.0;
            }
        }
        Tensor::matrix(self.size, k, data).expect("one-hot shape")
    }

    fn column(&self, values: &[f64]) -> Tensor {
        Tensor::matrix(self.size, 1, values.to_vec()).expect("column shape")
    }
}

/// Node ids of everything a caller may want from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    /// `[batch, steps]` attention weights, zero on padding.
    pub attention: NodeId,
    /// Per step, `[batch, 1]`.
    pub click_probs: Vec<NodeId>,
    /// Per step, `[batch, K]`.
    pub channel_probs: Vec<NodeId>,
    /// Per step, the balanced representation `[batch, L]`.
    pub representations: Vec<NodeId>,
    /// `[batch, 1]`.
    pub conversion: NodeId,
    /// Click cross-entropy summed over valid steps and rows.
    pub click_loss: NodeId,
    /// Channel cross-entropy summed over valid steps and rows.
    pub channel_loss: NodeId,
    /// Conversion cross-entropy summed over rows.
    pub conversion_loss: NodeId,
    /// `(click + channel + beta * conversion) / batch`; the descent target.
    pub objective: NodeId,
    /// `(click - lambda * channel + beta * conversion) / batch`: the value
    /// the representation side of the min-max game minimizes. Used for model
    /// selection and as the finite-difference reference for every parameter
    /// outside the channel head. Never backpropagated.
    pub minmax_objective: NodeId,
}

fn linear(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let xw = g.matmul(x, w)?;
    g.add(xw, b)
}

/// Records the full model on `graph` for `batch`, reading parameters from
/// `param_nodes` (in [`ModelParams`] order).
pub fn build_forward(
    graph: &mut Graph,
    params: &ModelParams,
    param_nodes: &[NodeId],
    batch: &Batch,
    opts: &ForwardOptions,
) -> Result<ForwardNodes> {
    let h = &params.hyper;
    let lay = &params.layout;
    let p = |i: usize| param_nodes[i];
    let (bs, hid, k) = (batch.size, h.hidden_size, h.num_channels);
    let reversal = opts.reversal_scale.unwrap_or(h.lambda);
    let mut dropout_rng = stream_rng(opts.dropout_seed, "dropout", 0);

    let mut hidden = graph.constant(Tensor::zeros(&[bs, hid]));
    let mut cell = graph.constant(Tensor::zeros(&[bs, hid]));
    let mut prev_channel = graph.constant(Tensor::zeros(&[bs, k]));
    let mut prev_click = graph.constant(Tensor::zeros(&[bs, 1]));

    let mut nodes = ForwardNodes {
        attention: 0,
        click_probs: Vec::with_capacity(batch.steps),
        channel_probs: Vec::with_capacity(batch.steps),
        representations: Vec::with_capacity(batch.steps),
        conversion: 0,
        click_loss: 0,
        channel_loss: 0,
        conversion_loss: 0,
        objective: 0,
        minmax_objective: 0,
    };
    let mut scores = Vec::with_capacity(batch.steps);
    let mut hiddens = Vec::with_capacity(batch.steps);
    let mut click_terms = Vec::with_capacity(batch.steps);
    let mut channel_terms = Vec::with_capacity(batch.steps);

    for t in 0..batch.steps {
        // Recurrent input: covariate embeddings, previous channel, previous click.
        let mut parts = Vec::with_capacity(h.cardinalities.len() + 3);
        for (f, &table) in lay.embeddings.iter().enumerate() {
            parts.push(graph.embedding_lookup(p(table), &batch.covariates[t][f])?);
        }
        parts.push(prev_channel);
        parts.push(prev_click);
        parts.push(hidden);
        let xh = graph.concat(&parts)?;

        let gates = linear(graph, xh, p(lay.lstm_w), p(lay.lstm_b))?;
        let pre_i = graph.slice_cols(gates, 0, hid)?;
        let pre_f = graph.slice_cols(gates, hid, hid)?;
        let pre_g = graph.slice_cols(gates, 2 * hid, hid)?;
        let pre_o = graph.slice_cols(gates, 3 * hid, hid)?;
        let gate_i = graph.sigmoid(pre_i)?;
        let gate_f = graph.sigmoid(pre_f)?;
        let gate_g = graph.tanh(pre_g)?;
        let gate_o = graph.sigmoid(pre_o)?;
        let keep = graph.mul(gate_f, cell)?;
        let write = graph.mul(gate_i, gate_g)?;
        cell = graph.add(keep, write)?;
        let cell_act = graph.tanh(cell)?;
        hidden = graph.mul(gate_o, cell_act)?;

        let state = match opts.mode {
            Mode::Train if h.dropout > 0.0 => graph.dropout(hidden, h.dropout, &mut dropout_rng)?,
            _ => hidden,
        };

        let phi = linear(graph, state, p(lay.phi_w), p(lay.phi_b))?;
        let rep = if h.linear_phi { phi } else { graph.tanh(phi)? };
        nodes.representations.push(rep);

        // Adversarial channel head behind gradient reversal.
        let reversed = graph.grad_reverse(rep, reversal)?;
        let ch1 = linear(graph, reversed, p(lay.channel_w1), p(lay.channel_b1))?;
        let ch1 = graph.tanh(ch1)?;
        let ch_logits = linear(graph, ch1, p(lay.channel_w2), p(lay.channel_b2))?;
        let ch_probs = graph.softmax(ch_logits)?;
        nodes.channel_probs.push(ch_probs);
        channel_terms.push(graph.categorical_cross_entropy(ch_probs, &batch.channels[t], &batch.weights[t])?);

        // Click head on [r_t, c_t].
        let channel = graph.constant(batch.one_hot(t, k));
        let click_in = graph.concat(&[rep, channel])?;
        let cl1 = linear(graph, click_in, p(lay.click_w1), p(lay.click_b1))?;
        let cl1 = graph.tanh(cl1)?;
        let cl_logit = linear(graph, cl1, p(lay.click_w2), p(lay.click_b2))?;
        let click_prob = graph.sigmoid(cl_logit)?;
        nodes.click_probs.push(click_prob);
        click_terms.push(graph.binary_cross_entropy(click_prob, &batch.clicks[t], &batch.weights[t])?);

        // Attention features and score.
        let att_in = match h.attention_input {
            AttentionInput::Concat => graph.concat(&[rep, channel, click_prob])?,
            AttentionInput::ClickOnly => click_prob,
        };
        let v = linear(graph, att_in, p(lay.attention_w), p(lay.attention_b))?;
        let v = graph.tanh(v)?;
        scores.push(graph.matmul(v, p(lay.attention_u))?);
        hiddens.push(v);

        prev_channel = channel;
        prev_click = graph.constant(batch.column(&batch.clicks[t]));
    }

    let score_matrix = graph.concat(&scores)?;
    let mask: Vec<bool> = (0..bs)
        .flat_map(|n| (0..batch.steps).map(move |t| (n, t)))
        .map(|(n, t)| batch.mask(t, n))
        .collect();
    let attention = graph.masked_softmax(score_matrix, &mask)?;
    nodes.attention = attention;

    let mut summary: Option<NodeId> = None;
    for (t, &v) in hiddens.iter().enumerate() {
        let a_t = graph.slice_cols(attention, t, 1)?;
        let weighted = graph.mul(v, a_t)?;
        summary = Some(match summary {
            None => weighted,
            Some(acc) => graph.add(acc, weighted)?,
        });
    }
    let summary = summary.ok_or_else(|| Error::invalid("batch has no steps"))?;
    let conv_logit = linear(graph, summary, p(lay.conversion_w), p(lay.conversion_b))?;
    let conversion = graph.sigmoid(conv_logit)?;
    nodes.conversion = conversion;

    let sum_nodes = |graph: &mut Graph, terms: &[NodeId]| -> Result<NodeId> {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = graph.add(acc, t)?;
        }
        Ok(acc)
    };
    nodes.click_loss = sum_nodes(graph, &click_terms)?;
    nodes.channel_loss = sum_nodes(graph, &channel_terms)?;
    nodes.conversion_loss = graph.binary_cross_entropy(conversion, &batch.converted, &vec![1.0; bs])?;

    let per_step = graph.add(nodes.click_loss, nodes.channel_loss)?;
    let weighted_conv = graph.scalar_mul(nodes.conversion_loss, h.beta)?;
    let total = graph.add(per_step, weighted_conv)?;
    nodes.objective = graph.scalar_mul(total, 1.0 / bs as f64)?;

    let adversarial = graph.scalar_mul(nodes.channel_loss, -h.lambda)?;
    let balanced = graph.add(nodes.click_loss, adversarial)?;
    let minmax = graph.add(balanced, weighted_conv)?;
    nodes.minmax_objective = graph.scalar_mul(minmax, 1.0 / bs as f64)?;
    Ok(nodes)
}

/// A recorded forward pass with its extracted outputs.
pub struct ForwardPass {
    pub graph: Graph,
    pub param_nodes: Vec<NodeId>,
    pub nodes: ForwardNodes,
    pub results: Vec<AttributionResult>,
    pub losses: LossSums,
}

pub fn forward(params: &ModelParams, journeys: &[&Journey], opts: &ForwardOptions) -> Result<ForwardPass> {
    let batch = Batch::new(journeys, params)?;
    let mut graph = Graph::new();
    let param_nodes: Vec<NodeId> = params.tensors.iter().map(|t| graph.parameter(t.clone())).collect();
    let nodes = build_forward(&mut graph, params, &param_nodes, &batch, opts)?;
    let results = extract_results(&graph, &nodes, &batch);
    let scalar = |id: NodeId| graph.value(id).data()[0];
    let losses = LossSums {
        click: scalar(nodes.click_loss),
        channel: scalar(nodes.channel_loss),
        conversion: scalar(nodes.conversion_loss),
        journeys: batch.size,
    };
    Ok(ForwardPass {
        graph,
        param_nodes,
        nodes,
        results,
        losses,
    })
}

fn extract_results(graph: &Graph, nodes: &ForwardNodes, batch: &Batch) -> Vec<AttributionResult> {
    let attention = graph.value(nodes.attention);
    let conversion = graph.value(nodes.conversion);
    (0..batch.size)
        .map(|n| {
            let len = batch.lengths[n];
            AttributionResult {
                attention: attention.row(n)[..len].to_vec(),
                click_probs: (0..len).map(|t| graph.value(nodes.click_probs[t]).at(n, 0)).collect(),
                channel_propensities: (0..len)
                    .map(|t| graph.value(nodes.channel_probs[t]).row(n).to_vec())
                    .collect(),
                conversion_prob: conversion.at(n, 0),
            }
        })
        .collect()
}

/// Eval-mode outputs for many journeys, processed in chunks of `batch_size`.
pub fn attribute_all(params: &ModelParams, journeys: &[Journey], batch_size: usize) -> Result<Vec<AttributionResult>> {
    let refs: Vec<&Journey> = journeys.iter().collect();
    let mut out = Vec::with_capacity(journeys.len());
    for chunk in refs.chunks(batch_size.max(1)) {
        out.extend(forward(params, chunk, &ForwardOptions::eval())?.results);
    }
    Ok(out)
}

/// Eval-mode outputs for a single journey.
pub fn attribute(params: &ModelParams, journey: &Journey) -> Result<AttributionResult> {
    Ok(forward(params, &[journey], &ForwardOptions::eval())?
        .results
        .remove(0))
}
