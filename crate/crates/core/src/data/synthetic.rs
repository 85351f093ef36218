//! Confounded synthetic journeys with known per-touchpoint credit.
//!
//! Each user carries a latent context vector. Covariates are noisy
//! quantizations of that context, the channel shown at each step is drawn
//! with probability proportional to `exp(gamma * affinity_k . context)`, and
//! clicks depend on both context and channel. Conversion depends only on the
//! channels shown, through per-channel effect weights, so the true credit of
//! touchpoint `t` is `w[c_t] / sum_s w[c_s]`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::types::{Journey, Touchpoint};
use super::vocab::VocabMap;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_channels: usize,
    pub covariate_cardinalities: Vec<usize>,
    /// Confounding strength; 0 gives randomized channel assignment.
    pub confounding: f64,
    /// True conversion effect of each channel.
    pub channel_effects: Vec<f64>,
    pub base_click_rate: f64,
    pub base_conversion_rate: f64,
    /// Weight of the context on the click logit.
    pub click_context_strength: f64,
    /// Per-step jitter of the context around the user's mean.
    pub context_noise: f64,
    /// Std-dev of the Gaussian noise on the conversion logit.
    pub conversion_noise: f64,
    pub max_journey_len: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_users: 5000,
            num_channels: 4,
            covariate_cardinalities: vec![8, 8, 8],
            confounding: 2.0,
            channel_effects: vec![3.0, 1.0, 1.0, 1.0],
            base_click_rate: 0.1,
            base_conversion_rate: 0.005,
            click_context_strength: 1.0,
            context_noise: 0.5,
            conversion_noise: 0.5,
            max_journey_len: 6,
            seed: 2020,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| r > 0.0 && r < 1.0;
        let fail = |m: String| Err(Error::invalid(format!("synthetic config: {m}")));
        if self.num_channels < 2 {
            return fail(format!("need at least 2 channels, got {}", self.num_channels));
        }
        if self.channel_effects.len() != self.num_channels {
            return fail(format!(
                "{} channel effects for {} channels",
                self.channel_effects.len(),
                self.num_channels
            ));
        }
        if self.channel_effects.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return fail("channel effects must be finite and nonnegative".into());
        }
        if !rate_ok(self.base_click_rate) || !rate_ok(self.base_conversion_rate) {
            return fail("base rates must lie in (0, 1)".into());
        }
        if !(self.confounding >= 0.0 && self.confounding.is_finite()) {
            return fail(format!("confounding {} must be >= 0", self.confounding));
        }
        if self.covariate_cardinalities.is_empty() || self.covariate_cardinalities.contains(&0) {
            return fail("every covariate field needs cardinality >= 1".into());
        }
        if self.max_journey_len == 0 || self.num_users == 0 {
            return fail("num_users and max_journey_len must be positive".into());
        }
        if self.context_noise < 0.0 || self.conversion_noise < 0.0 {
            return fail("noise levels must be >= 0".into());
        }
        Ok(())
    }

    pub fn channel_names(&self) -> Vec<String> {
        (0..self.num_channels).map(|k| format!("ch{k}")).collect()
    }

    pub fn vocab(&self) -> VocabMap {
        VocabMap::identity(&self.covariate_cardinalities, self.channel_names())
    }
}

/// Generating parameters plus the channel sequence of every emitted journey.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SyntheticConfig,
    pub channel_affinity: Vec<Vec<f64>>,
    pub click_direction: Vec<f64>,
    pub channel_base_cost: Vec<f64>,
    pub journeys: BTreeMap<String, Vec<usize>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn sample_categorical<R: Rng>(rng: &mut R, logits: &[f64]) -> usize {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k;
        }
        u -= w;
    }
    weights.len() - 1
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<(Vec<Journey>, GroundTruth)> {
    config.validate()?;
    let fields = config.covariate_cardinalities.len();
    let k = config.num_channels;

    let mut global = stream_rng(config.seed, "synthetic-global", 0);
    let channel_affinity: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..fields).map(|_| normal(&mut global)).collect())
        .collect();
    let click_direction: Vec<f64> = (0..fields).map(|_| normal(&mut global) / (fields as f64).sqrt()).collect();
    let channel_base_cost: Vec<f64> = (0..k).map(|_| 0.01 * (0.5 + global.random::<f64>())).collect();

    let base_click = logit(config.base_click_rate);
    let base_conv = logit(config.base_conversion_rate);
    let mut journeys = Vec::with_capacity(config.num_users);
    let mut truth_map = BTreeMap::new();

    for u in 0..config.num_users {
        let mut rng = stream_rng(config.seed, "synthetic-user", u as u64);
        let context: Vec<f64> = (0..fields).map(|_| normal(&mut rng)).collect();
        let len = rng.random_range(1..=config.max_journey_len);
        let mut ts: i64 = rng.random_range(0..30 * 86_400);
        let mut touchpoints = Vec::with_capacity(len);
        let mut effect_sum = 0.0;

        for _ in 0..len {
            let ctx: Vec<f64> = context
                .iter()
                .map(|c| c + config.context_noise * normal(&mut rng))
                .collect();
            let covariates = ctx
                .iter()
                .zip(&config.covariate_cardinalities)
                .map(|(x, &card)| 1 + ((sigmoid(1.7 * x) * card as f64) as usize).min(card - 1))
                .collect();
            let logits: Vec<f64> = channel_affinity
                .iter()
                .map(|a| config.confounding * a.iter().zip(&ctx).map(|(p, q)| p * q).sum::<f64>())
                .collect();
            let channel = sample_categorical(&mut rng, &logits);
            let ctx_term: f64 = click_direction.iter().zip(&ctx).map(|(d, x)| d * x).sum();
            let p_click = sigmoid(
                base_click + config.click_context_strength * ctx_term + config.channel_effects[channel],
            );
            let click = rng.random::<f64>() < p_click;
            let cost = channel_base_cost[channel] * (0.3 * normal(&mut rng)).exp();
            effect_sum += config.channel_effects[channel];
            touchpoints.push(Touchpoint {
                covariates,
                channel,
                click,
                cost,
                timestamp: ts,
            });
            ts += rng.random_range(60..7_200);
        }
        let p_conv = sigmoid(base_conv + effect_sum + config.conversion_noise * normal(&mut rng));
        let converted = rng.random::<f64>() < p_conv;
        let id = format!("u{u}#0");
        truth_map.insert(id.clone(), touchpoints.iter().map(|t| t.channel).collect());
        journeys.push(Journey {
            id,
            user_id: format!("u{u}"),
            touchpoints,
            converted,
        });
    }

    let truth = GroundTruth {
        config: config.clone(),
        channel_affinity,
        click_direction,
        channel_base_cost,
        journeys: truth_map,
    };
    Ok((journeys, truth))
}

/// True per-touchpoint credit `w[c_t] / sum_s w[c_s]` for a generated journey.
///
/// Uniform when every touched channel has zero effect.
pub fn ground_truth_attribution(truth: &GroundTruth, journey: &Journey) -> Result<Vec<f64>> {
    let known = truth
        .journeys
        .get(&journey.id)
        .ok_or_else(|| Error::UnknownJourney(journey.id.clone()))?;
    if !known.iter().copied().eq(journey.channels()) {
        return Err(Error::UnknownJourney(format!(
            "{} (channel sequence differs from the generated one)",
            journey.id
        )));
    }
    let w = &truth.config.channel_effects;
    let total: f64 = known.iter().map(|&c| w[c]).sum();
    if total <= 0.0 {
        return Ok(vec![1.0 / known.len() as f64; known.len()]);
    }
    Ok(known.iter().map(|&c| w[c] / total).collect())
}
