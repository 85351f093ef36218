//! Reference attribution methods: position rules and logistic regression on
//! channel counts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionRecord, Attributions};
use crate::data::Journey;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    First,
    Last,
    Linear,
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(RuleKind::First),
            "last" => Ok(RuleKind::Last),
            "linear" => Ok(RuleKind::Linear),
            other => Err(Error::invalid(format!("unknown attribution rule `{other}`"))),
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleKind::First => "first",
            RuleKind::Last => "last",
            RuleKind::Linear => "linear",
        })
    }
}

/// Position-based credit: all on the first or last touchpoint, or uniform.
pub fn rule_attribution(journey: &Journey, kind: RuleKind) -> Result<Vec<f64>> {
    let n = journey.len();
    if n == 0 {
        return Err(Error::invalid(format!("journey `{}` has no touchpoints", journey.id)));
    }
    let mut credit = vec![0.0; n];
    match kind {
        RuleKind::First => credit[0] = 1.0,
        RuleKind::Last => credit[n - 1] = 1.0,
        RuleKind::Linear => credit.fill(1.0 / n as f64),
    }
    Ok(credit)
}

/// Per-channel credit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelCredit {
    pub credits: Vec<f64>,
    /// Whether `credits` sums to one; false when no channel earned credit.
    pub normalized: bool,
}

impl ChannelCredit {
    /// Spreads channel credit over a journey's touchpoints in proportion to
    /// each touchpoint's channel credit; uniform if none of its channels has
    /// any.
    pub fn touchpoint_weights(&self, journey: &Journey) -> Result<Vec<f64>> {
        if journey.is_empty() {
            return Err(Error::invalid(format!("journey `{}` has no touchpoints", journey.id)));
        }
        let raw: Vec<f64> = journey
            .channels()
            .map(|c| {
                self.credits
                    .get(c)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("channel {c} has no credit entry")))
            })
            .collect::<Result<_>>()?;
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            Ok(raw.iter().map(|r| r / total).collect())
        } else {
            Ok(vec![1.0 / raw.len() as f64; raw.len()])
        }
    }
}

pub const LR_L2_WEIGHT: f64 = 1e-4;
pub const LR_GRAD_TOLERANCE: f64 = 1e-6;
pub const LR_MAX_ITERATIONS: usize = 10_000;

/// Logistic regression of conversion on per-journey channel counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// Objective value after every accepted step, starting at the origin.
    pub loss_trace: Vec<f64>,
}

fn channel_counts(journey: &Journey, num_channels: usize) -> Result<Vec<f64>> {
    let mut x = vec![0.0; num_channels];
    for c in journey.channels() {
        if c >= num_channels {
            return Err(Error::invalid(format!(
                "journey `{}` uses channel {c}, only {num_channels} known",
                journey.id
            )));
        }
        x[c] += 1.0;
    }
    Ok(x)
}

struct LrProblem {
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
}

impl LrProblem {
    /// Mean log-loss plus `L2/2 * |w|^2` (intercept unpenalized) and its
    /// gradient, laid out as `[w..., b]`.
    fn objective(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let k = theta.len() - 1;
        let n = self.labels.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; k + 1];
        for (x, &y) in self.features.iter().zip(&self.labels) {
            let z: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + theta[k];
            // log(1 + e^z) - y z, stable for both signs of z.
            loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
            let p = 1.0 / (1.0 + (-z).exp());
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += (p - y) * xi;
            }
            grad[k] += p - y;
        }
        loss /= n;
        grad.iter_mut().for_each(|g| *g /= n);
        for i in 0..k {
            loss += 0.5 * LR_L2_WEIGHT * theta[i] * theta[i];
            grad[i] += LR_L2_WEIGHT * theta[i];
        }
        (loss, grad)
    }
}

/// Fits by gradient descent with Armijo backtracking until the gradient norm
/// drops below [`LR_GRAD_TOLERANCE`] or [`LR_MAX_ITERATIONS`] is reached.
pub fn lr_train(journeys: &[Journey], num_channels: usize) -> Result<LrModel> {
    let positives = journeys.iter().filter(|j| j.converted).count();
    if positives == 0 || positives == journeys.len() {
        return Err(Error::invalid(format!(
            "logistic regression needs both classes, got {positives} converted of {}",
            journeys.len()
        )));
    }
    let problem = LrProblem {
        features: journeys
            .iter()
            .map(|j| channel_counts(j, num_channels))
            .collect::<Result<_>>()?,
        labels: journeys.iter().map(|j| if j.converted { 1.0 } else { 0.0 }).collect(),
    };
    let mut theta = vec![0.0; num_channels + 1];
    let (mut loss, mut grad) = problem.objective(&theta);
    let mut trace = vec![loss];
    let mut step = 1.0;
    let mut iterations = 0;
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    while norm(&grad) >= LR_GRAD_TOLERANCE && iterations < LR_MAX_ITERATIONS {
        let g2 = norm(&grad).powi(2);
        step *= 2.0;
        loop {
            let candidate: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let (c_loss, c_grad) = problem.objective(&candidate);
            if c_loss <= loss - 0.5 * step * g2 {
                theta = candidate;
                loss = c_loss;
                grad = c_grad;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                // No decrease representable in floating point: stationary.
                return Ok(finish(theta, iterations, false, norm(&grad), trace));
            }
        }
        trace.push(loss);
        iterations += 1;
    }
    let gradient_norm = norm(&grad);
    if gradient_norm >= LR_GRAD_TOLERANCE {
        log::warn!("logistic regression stopped after {iterations} iterations, gradient norm {gradient_norm:.3e}");
    }
    Ok(finish(theta, iterations, gradient_norm < LR_GRAD_TOLERANCE, gradient_norm, trace))
}

fn finish(mut theta: Vec<f64>, iterations: usize, converged: bool, gradient_norm: f64, loss_trace: Vec<f64>) -> LrModel {
    let intercept = theta.pop().expect("intercept slot");
    LrModel {
        coefficients: theta,
        intercept,
        iterations,
        converged,
        gradient_norm,
        loss_trace,
    }
}

/// Nonnegative part of the coefficients, normalized to sum to one.
pub fn lr_attribute(coefficients: &[f64]) -> ChannelCredit {
    let clipped: Vec<f64> = coefficients.iter().map(|c| c.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total > 0.0 {
        ChannelCredit {
            credits: clipped.iter().map(|c| c / total).collect(),
            normalized: true,
        }
    } else {
        log::warn!("every logistic-regression coefficient is nonpositive; all channel credits are zero");
        ChannelCredit {
            credits: vec![0.0; coefficients.len()],
            normalized: false,
        }
    }
}

/// Which baseline produced an attribution file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    Rule(RuleKind),
    LogisticRegression,
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(Baseline::LogisticRegression),
            other => other.parse().map(Baseline::Rule).map_err(|_| {
                Error::invalid(format!("unknown baseline `{other}` (expected first, last, linear or lr)"))
            }),
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Baseline::Rule(k) => k.fmt(f),
            Baseline::LogisticRegression => f.write_str("lr"),
        }
    }
}

/// Baseline attributions for `targets`; logistic regression is fitted on
/// `fit_set`.
pub fn baseline_attributions(
    baseline: Baseline,
    fit_set: &[Journey],
    targets: &[Journey],
    num_channels: usize,
) -> Result<Attributions> {
    let weights: Vec<Vec<f64>> = match baseline {
        Baseline::Rule(kind) => targets.iter().map(|j| rule_attribution(j, kind)).collect::<Result<_>>()?,
        Baseline::LogisticRegression => {
            let model = lr_train(fit_set, num_channels)?;
            let credit = lr_attribute(&model.coefficients);
            targets
                .iter()
                .map(|j| credit.touchpoint_weights(j))
                .collect::<Result<_>>()?
        }
    };
    let records = targets
        .iter()
        .zip(weights)
        .map(|(j, weights)| AttributionRecord {
            journey_id: j.id.clone(),
            weights,
            conversion_prob: None,
        })
        .collect();
    Attributions::new(baseline.to_string(), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Touchpoint;

    fn journey(id: &str, channels: &[usize], converted: bool) -> Journey {
        Journey {
            id: id.into(),
            user_id: id.into(),
            touchpoints: channels
                .iter()
                .enumerate()
                .map(|(t, &channel)| Touchpoint {
                    covariates: vec![0],
                    channel,
                    click: false,
                    cost: 1.0,
                    timestamp: t as i64,
                })
                .collect(),
            converted,
        }
    }

    #[test]
    fn rules() {
        let j = journey("a", &[0, 1, 2], true);
        assert_eq!(rule_attribution(&j, RuleKind::First).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(rule_attribution(&j, RuleKind::Last).unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(rule_attribution(&j, RuleKind::Linear).unwrap(), vec![1.0 / 3.0; 3]);
        let single = journey("s", &[1], false);
        for kind in [RuleKind::First, RuleKind::Last, RuleKind::Linear] {
            assert_eq!(rule_attribution(&single, kind).unwrap(), vec![1.0]);
        }
        assert!(rule_attribution(&journey("e", &[], false), RuleKind::First).is_err());
        assert!("middle".parse::<RuleKind>().is_err());
        assert!("u-shaped".parse::<Baseline>().is_err());
        assert_eq!("lr".parse::<Baseline>().unwrap(), Baseline::LogisticRegression);
    }

    #[test]
    fn normalization_of_coefficients() {
        let c = lr_attribute(&[2.0, 1.0, -1.0]);
        assert!(c.normalized);
        assert!((c.credits[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.credits[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.credits[2], 0.0);
        let z = lr_attribute(&[-1.0, 0.0]);
        assert!(!z.normalized);
        assert_eq!(z.credits, vec![0.0, 0.0]);
    }

    #[test]
    fn touchpoint_weights_follow_channel_credit() {
        let credit = ChannelCredit {
            credits: vec![0.75, 0.25, 0.0],
            normalized: true,
        };
        let w = credit.touchpoint_weights(&journey("a", &[0, 1, 1], true)).unwrap();
        assert_eq!(w, vec![0.6, 0.2, 0.2]);
        let u = credit.touchpoint_weights(&journey("b", &[2, 2], true)).unwrap();
        assert_eq!(u, vec![0.5, 0.5]);
    }

    fn separable() -> Vec<Journey> {
        let mut js = Vec::new();
        for i in 0..10 {
            js.push(journey(&format!("p{i}"), &[0, 2], true));
            js.push(journey(&format!("n{i}"), &[1, 2], false));
        }
        js
    }

    #[test]
    fn separable_channels_get_signed_coefficients() {
        let m = lr_train(&separable(), 3).unwrap();
        assert!(m.coefficients[0] > 0.0 && m.coefficients[1] < 0.0, "{:?}", m.coefficients);
        let credit = lr_attribute(&m.coefficients);
        assert!((credit.credits[0] - 1.0).abs() < 1e-12);
        for w in m.loss_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn duplicated_data_gives_same_fit() {
        let js = separable();
        let doubled: Vec<Journey> = js.iter().chain(&js).cloned().collect();
        let a = lr_train(&js, 3).unwrap();
        let b = lr_train(&doubled, 3).unwrap();
        for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let js = vec![journey("a", &[0], true), journey("b", &[1], true)];
        assert!(lr_train(&js, 2).is_err());
    }

    #[test]
    fn baseline_files_are_valid() {
        let js = separable();
        for b in ["first", "last", "linear", "lr"] {
            let a = baseline_attributions(b.parse().unwrap(), &js, &js, 3).unwrap();
            assert_eq!(a.source, b);
            assert_eq!(a.records.len(), js.len());
        }
    }
}
