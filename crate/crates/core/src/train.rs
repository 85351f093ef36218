//! Mini-batch Adam training, best-epoch selection and grid search.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::Journey;
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{forward, AttributionResult, ForwardOptions, Hyperparams, LossComponents, LossSums, ModelParams};
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Candidate values per hyperparameter; absent lists keep the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub learning_rate: Option<Vec<f64>>,
    pub batch_size: Option<Vec<usize>>,
    pub embedding_size: Option<Vec<usize>>,
    pub hidden_size: Option<Vec<usize>>,
    pub representation_size: Option<Vec<usize>>,
    pub mlp_hidden_size: Option<Vec<usize>>,
    pub dropout: Option<Vec<f64>>,
    /// `(lambda, beta)` pairs, searched jointly.
    pub lambda_beta: Option<Vec<(f64, f64)>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub grid: Option<Grid>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 50,
            adam: AdamConfig::default(),
            clip_norm: Some(5.0),
            seed: 2020,
            grid: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be >= 1"));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::invalid(format!("invalid Adam settings {a:?}")));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::invalid(format!("clip norm {c} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    learning_rate: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    steps: u64,
}

impl Adam {
    pub fn new(params: &[Tensor], learning_rate: f64, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            config,
            learning_rate,
            m: zeros.clone(),
            v: zeros,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        self.steps += 1;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

/// Eval-mode losses and outputs over a journey set.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub losses: LossComponents,
    /// Conversion AUC; `None` when labels are single-class.
    pub auc: Option<f64>,
    pub results: Vec<AttributionResult>,
}

pub fn evaluate(params: &ModelParams, journeys: &[Journey], batch_size: usize) -> Result<Evaluation> {
    if journeys.is_empty() {
        return Err(Error::invalid("evaluation over zero journeys"));
    }
    let refs: Vec<&Journey> = journeys.iter().collect();
    let mut sums = LossSums::default();
    let mut results = Vec::with_capacity(journeys.len());
    for chunk in refs.chunks(batch_size.max(1)) {
        let pass = forward(params, chunk, &ForwardOptions::eval())?;
        sums.merge(&pass.losses);
        results.extend(pass.results);
    }
    let labels: Vec<bool> = journeys.iter().map(|j| j.converted).collect();
    let auc = if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        None
    } else {
        let scores: Vec<f64> = results.iter().map(|r| r.conversion_prob).collect();
        Some(eval::auc(&scores, &labels)?)
    };
    Ok(Evaluation {
        losses: sums.components(params.hyper.lambda, params.hyper.beta)?,
        auc,
        results,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Train-mode losses accumulated over the epoch's batches.
    pub train: LossComponents,
    pub validation: LossComponents,
    pub validation_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_validation: LossComponents,
    pub initial_validation_auc: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub adam_steps: u64,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

/// Trains from a fresh initialization seeded by `config.seed` and returns the
/// parameters of the epoch with the lowest validation objective.
pub fn train(
    train_set: &[Journey],
    validation_set: &[Journey],
    hyper: &Hyperparams,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() || validation_set.is_empty() {
        return Err(Error::invalid(format!(
            "training needs nonempty train and validation sets (got {} and {})",
            train_set.len(),
            validation_set.len()
        )));
    }
    let mut params = ModelParams::init(hyper, config.seed)?;
    for j in train_set.iter().chain(validation_set) {
        j.validate(hyper.num_channels, hyper.max_len, &hyper.cardinalities)?;
    }
    let eval_batch = config.batch_size.max(256);
    let initial = evaluate(&params, validation_set, eval_batch)?;
    let mut adam = Adam::new(&params.tensors, config.learning_rate, config.adam);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut stream_rng(config.seed, "epoch-shuffle", epoch as u64));
        let mut dropout_seeds = stream_rng(config.seed, "batch-dropout", epoch as u64);
        let mut sums = LossSums::default();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let journeys: Vec<&Journey> = chunk.iter().map(|&i| &train_set[i]).collect();
            let opts = ForwardOptions::train(dropout_seeds.next_u64());
            let pass = forward(&params, &journeys, &opts)?;
            let diverged = |detail: String| Error::Diverged {
                epoch,
                batch: b,
                detail,
            };
            let loss = pass.graph.value(pass.nodes.objective).data()[0];
            if !loss.is_finite() {
                return Err(diverged(format!("training loss is {loss}")));
            }
            let mut grads = pass.graph.backward(pass.nodes.objective)?.collect(&pass.param_nodes);
            if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
                return Err(diverged(format!("non-finite gradient for `{}`", params.names[i])));
            }
            if let Some(c) = config.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            adam.step(&mut params.tensors, &grads);
            if let Some(i) = params.tensors.iter().position(|t| !t.all_finite()) {
                return Err(diverged(format!("parameter `{}` became non-finite", params.names[i])));
            }
            sums.merge(&pass.losses);
        }
        let val = evaluate(&params, validation_set, eval_batch)?;
        let record = EpochRecord {
            epoch,
            train: sums.components(hyper.lambda, hyper.beta)?,
            validation: val.losses,
            validation_auc: val.auc,
        };
        log::info!(
            "epoch {epoch}: train {:.5} validation objective {:.5} auc {}",
            record.train.training,
            record.validation.objective,
            record.validation_auc.map_or("n/a".to_string(), |a| format!("{a:.4}"))
        );
        let objective = record.validation.objective;
        if best.as_ref().is_none_or(|(b, _, _)| objective < *b) {
            best = Some((objective, epoch, params.tensors.clone()));
        }
        epochs.push(record);
    }
    let (_, best_epoch, tensors) = best.expect("at least one epoch");
    params.tensors = tensors;
    Ok((
        params,
        TrainHistory {
            initial_validation: initial.losses,
            initial_validation_auc: initial.auc,
            epochs,
            best_epoch,
            adam_steps: adam.steps(),
        },
    ))
}

/// One point of a hyperparameter grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hyperparams: Hyperparams,
}

/// Exhaustive product of the grid lists; the last field varies fastest.
pub fn grid_points(grid: &Grid, base: &Hyperparams, config: &TrainConfig) -> Result<Vec<GridPoint>> {
    fn list<T: Clone>(name: &str, values: &Option<Vec<T>>, default: T) -> Result<Vec<T>> {
        match values {
            None => Ok(vec![default]),
            Some(v) if v.is_empty() => Err(Error::invalid(format!("grid list `{name}` is empty"))),
            Some(v) => Ok(v.clone()),
        }
    }
    let lrs = list("learning_rate", &grid.learning_rate, config.learning_rate)?;
    let batches = list("batch_size", &grid.batch_size, config.batch_size)?;
    let emb = list("embedding_size", &grid.embedding_size, base.embedding_size)?;
    let hid = list("hidden_size", &grid.hidden_size, base.hidden_size)?;
    let rep = list("representation_size", &grid.representation_size, base.representation_size)?;
    let mlp = list("mlp_hidden_size", &grid.mlp_hidden_size, base.mlp_hidden_size)?;
    let drop = list("dropout", &grid.dropout, base.dropout)?;
    let lb = list("lambda_beta", &grid.lambda_beta, (base.lambda, base.beta))?;

    let mut out = Vec::new();
    for &learning_rate in &lrs {
        for &batch_size in &batches {
            for &embedding_size in &emb {
                for &hidden_size in &hid {
                    for &representation_size in &rep {
                        for &mlp_hidden_size in &mlp {
                            for &dropout in &drop {
                                for &(lambda, beta) in &lb {
                                    let hyperparams = Hyperparams {
                                        embedding_size,
                                        hidden_size,
                                        representation_size,
                                        mlp_hidden_size,
                                        dropout,
                                        lambda,
                                        beta,
                                        ..base.clone()
                                    };
                                    hyperparams.validate()?;
                                    out.push(GridPoint {
                                        learning_rate,
                                        batch_size,
                                        hyperparams,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GridOutcome {
    Trained {
        validation_objective: f64,
        validation_auc: Option<f64>,
        best_epoch: usize,
    },
    Failed {
        error: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub point: GridPoint,
    pub outcome: GridOutcome,
}

pub struct GridSearchResult {
    /// Index into `leaderboard` of the selected point.
    pub best: usize,
    pub params: ModelParams,
    pub history: TrainHistory,
    pub leaderboard: Vec<LeaderboardEntry>,
}

/// Trains every grid point and keeps the one with the lowest validation
/// objective, breaking ties by higher validation AUC, then by grid order.
pub fn grid_search(
    train_set: &[Journey],
    validation_set: &[Journey],
    points: &[GridPoint],
    config: &TrainConfig,
) -> Result<GridSearchResult> {
    if points.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let mut leaderboard = Vec::with_capacity(points.len());
    let mut best: Option<(usize, ModelParams, TrainHistory)> = None;
    let mut first_error = None;
    for (i, point) in points.iter().enumerate() {
        let cfg = TrainConfig {
            learning_rate: point.learning_rate,
            batch_size: point.batch_size,
            grid: None,
            ..config.clone()
        };
        log::info!("grid point {}/{}", i + 1, points.len());
        let outcome = match train(train_set, validation_set, &point.hyperparams, &cfg) {
            Ok((params, history)) => {
                let rec = history.best();
                let outcome = GridOutcome::Trained {
                    validation_objective: rec.validation.objective,
                    validation_auc: rec.validation_auc,
                    best_epoch: history.best_epoch,
                };
                let better = match &best {
                    None => true,
                    Some((_, _, h)) => beats(rec, h.best()),
                };
                if better {
                    best = Some((i, params, history));
                }
                outcome
            }
            Err(e) => {
                log::warn!("grid point {} failed: {e}", i + 1);
                let error = e.to_string();
                first_error.get_or_insert(e);
                GridOutcome::Failed { error }
            }
        };
        leaderboard.push(LeaderboardEntry {
            point: point.clone(),
            outcome,
        });
    }
    match best {
        Some((best, params, history)) => Ok(GridSearchResult {
            best,
            params,
            history,
            leaderboard,
        }),
        None => Err(first_error.expect("every failed point records its error")),
    }
}

fn beats(candidate: &EpochRecord, incumbent: &EpochRecord) -> bool {
    let (c, i) = (candidate.validation.objective, incumbent.validation.objective);
    if c != i {
        return c < i;
    }
    let auc = |r: &EpochRecord| r.validation_auc.unwrap_or(f64::NEG_INFINITY);
    auc(candidate) > auc(incumbent)
}

/// Machine-readable summary of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub hyperparams: Hyperparams,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub chosen_epoch: usize,
    pub history: TrainHistory,
    /// Present when a grid search ran.
    pub leaderboard: Option<Vec<LeaderboardEntry>>,
}
