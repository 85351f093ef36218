use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::types::{Journey, RawJourney, Touchpoint};
use crate::error::{Error, Result};

/// Index reserved for values outside a field's vocabulary.
pub const OOV_INDEX: usize = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabMap {
    /// Per covariate field: value -> index in `1..=len`.
    pub fields: Vec<BTreeMap<String, usize>>,
    /// Channel names in index order.
    pub channels: Vec<String>,
}

impl VocabMap {
    /// Keeps the `top_v` most frequent values of every covariate field, ties
    /// broken lexicographically. Channels are indexed in the order given.
    pub fn build(journeys: &[RawJourney], channels: &[String], top_v: usize) -> Result<Self> {
        if top_v == 0 {
            return Err(Error::invalid("vocabulary size must be at least 1"));
        }
        let num_fields = journeys
            .iter()
            .flat_map(|j| j.impressions.first())
            .map(|i| i.covariates.len())
            .next()
            .unwrap_or(0);
        let mut counts: Vec<HashMap<&str, usize>> = vec![HashMap::new(); num_fields];
        for imp in journeys.iter().flat_map(|j| &j.impressions) {
            if imp.covariates.len() != num_fields {
                return Err(Error::invalid(format!(
                    "impression of user `{}` has {} covariates, expected {num_fields}",
                    imp.user_id,
                    imp.covariates.len()
                )));
            }
            for (f, v) in imp.covariates.iter().enumerate() {
                *counts[f].entry(v).or_default() += 1;
            }
        }
        let fields = counts
            .into_iter()
            .map(|c| {
                let mut ranked: Vec<(&str, usize)> = c.into_iter().collect();
                ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
                ranked
                    .into_iter()
                    .take(top_v)
                    .enumerate()
                    .map(|(i, (v, _))| (v.to_string(), i + 1))
                    .collect()
            })
            .collect();
        Ok(VocabMap {
            fields,
            channels: channels.to_vec(),
        })
    }

    /// Table sizes per field, including the out-of-vocabulary slot.
    pub fn cardinalities(&self) -> Vec<usize> {
        self.fields.iter().map(|f| f.len() + 1).collect()
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn encode_value(&self, field: usize, value: &str) -> usize {
        self.fields[field].get(value).copied().unwrap_or(OOV_INDEX)
    }

    pub fn encode(&self, journeys: &[RawJourney]) -> Result<Vec<Journey>> {
        journeys
            .iter()
            .map(|j| {
                let touchpoints = j
                    .impressions
                    .iter()
                    .map(|imp| {
                        let channel = self.channel_index(&imp.channel_id).ok_or_else(|| {
                            Error::invalid(format!("journey `{}`: unknown channel `{}`", j.id, imp.channel_id))
                        })?;
                        Ok(Touchpoint {
                            covariates: imp
                                .covariates
                                .iter()
                                .enumerate()
                                .map(|(f, v)| self.encode_value(f, v))
                                .collect(),
                            channel,
                            click: imp.click,
                            cost: imp.cost,
                            timestamp: imp.timestamp,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Journey {
                    id: j.id.clone(),
                    user_id: j.user_id.clone(),
                    touchpoints,
                    converted: j.converted,
                })
            })
            .collect()
    }

    /// Vocabulary for data whose covariates are already integer codes
    /// `1..=cardinality`.
    pub fn identity(cardinalities: &[usize], channels: Vec<String>) -> Self {
        VocabMap {
            fields: cardinalities
                .iter()
                .map(|&c| (1..=c).map(|i| (i.to_string(), i)).collect())
                .collect(),
            channels,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("vocabulary serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
