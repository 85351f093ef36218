use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_LEN: usize = 20;

/// One raw row of an impression log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub timestamp: i64,
    pub user_id: String,
    pub channel_id: String,
    pub click: bool,
    pub cost: f64,
    pub conversion_id: Option<String>,
    pub covariates: Vec<String>,
}

/// A user's touchpoint sequence before covariate encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct RawJourney {
    pub id: String,
    pub user_id: String,
    pub impressions: Vec<Impression>,
    pub converted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Touchpoint {
    /// One vocabulary index per covariate field; 0 is out-of-vocabulary.
    pub covariates: Vec<usize>,
    pub channel: usize,
    /// Click outcome of this touchpoint.
    pub click: bool,
    pub cost: f64,
    pub timestamp: i64,
}

/// Encoded journey: the unit of training and evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Journey {
    pub id: String,
    pub user_id: String,
    pub touchpoints: Vec<Touchpoint>,
    pub converted: bool,
}

impl Journey {
    pub fn len(&self) -> usize {
        self.touchpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.touchpoints.is_empty()
    }

    pub fn channels(&self) -> impl Iterator<Item = usize> + '_ {
        self.touchpoints.iter().map(|t| t.channel)
    }

    /// Checks the structural invariants against `num_channels` channels,
    /// `max_len` touchpoints and the given covariate cardinalities.
    pub fn validate(&self, num_channels: usize, max_len: usize, cardinalities: &[usize]) -> Result<()> {
        let fail = |msg: String| Err(Error::invalid(format!("journey `{}`: {msg}", self.id)));
        if self.touchpoints.is_empty() || self.touchpoints.len() > max_len {
            return fail(format!("length {} outside 1..={max_len}", self.touchpoints.len()));
        }
        for (t, tp) in self.touchpoints.iter().enumerate() {
            if tp.channel >= num_channels {
                return fail(format!("touchpoint {t} channel {} >= {num_channels}", tp.channel));
            }
            if tp.covariates.len() != cardinalities.len() {
                return fail(format!(
                    "touchpoint {t} has {} covariates, expected {}",
                    tp.covariates.len(),
                    cardinalities.len()
                ));
            }
            if let Some((f, &v)) = tp
                .covariates
                .iter()
                .enumerate()
                .find(|(f, &v)| v >= cardinalities[*f])
            {
                return fail(format!("touchpoint {t} covariate {f} index {v} out of range"));
            }
            if !(tp.cost >= 0.0 && tp.cost.is_finite()) {
                return fail(format!("touchpoint {t} cost {}", tp.cost));
            }
        }
        if self
            .touchpoints
            .windows(2)
            .any(|w| w[1].timestamp < w[0].timestamp)
        {
            return fail("timestamps decrease".into());
        }
        Ok(())
    }
}
