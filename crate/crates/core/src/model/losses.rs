use serde::{Deserialize, Serialize};

use crate::autodiff::PROB_EPS;
use crate::error::{Error, Result};

/// `-(y ln p + (1 - y) ln(1 - p))` with `p` clamped away from 0 and 1.
pub fn binary_cross_entropy(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// `-ln probs[target]` with clamping.
pub fn categorical_cross_entropy(probs: &[f64], target: usize) -> f64 {
    -probs[target].clamp(PROB_EPS, 1.0 - PROB_EPS).ln()
}

/// Raw loss sums over a set of journeys.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSums {
    pub click: f64,
    pub channel: f64,
    pub conversion: f64,
    pub journeys: usize,
}

impl LossSums {
    pub fn merge(&mut self, other: &LossSums) {
        self.click += other.click;
        self.channel += other.channel;
        self.conversion += other.conversion;
        self.journeys += other.journeys;
    }

    pub fn components(&self, lambda: f64, beta: f64) -> Result<LossComponents> {
        LossComponents::new(self, lambda, beta)
    }
}

/// Per-journey loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    /// Channel-assignment cross-entropy summed over steps.
    pub channel: f64,
    /// Click cross-entropy summed over steps.
    pub click: f64,
    /// Conversion cross-entropy.
    pub conversion: f64,
    /// `click - lambda * channel`.
    pub representation: f64,
    /// `representation + beta * conversion`; used for model selection.
    pub objective: f64,
    /// `click + channel + beta * conversion`; the scalar gradient descent
    /// sees, with the `-lambda` applied by gradient reversal instead.
    pub training: f64,
}

impl LossComponents {
    fn new(sums: &LossSums, lambda: f64, beta: f64) -> Result<Self> {
        if sums.journeys == 0 {
            return Err(Error::invalid("loss over zero journeys"));
        }
        let n = sums.journeys as f64;
        let (channel, click, conversion) = (sums.channel / n, sums.click / n, sums.conversion / n);
        for (name, v) in [("channel loss", channel), ("click loss", click), ("conversion loss", conversion)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        let representation = click - lambda * channel;
        Ok(LossComponents {
            channel,
            click,
            conversion,
            representation,
            objective: representation + beta * conversion,
            training: click + channel + beta * conversion,
        })
    }
}
