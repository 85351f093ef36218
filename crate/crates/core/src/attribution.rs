//! Attribution file: per-touchpoint credit for a set of journeys.
//!
//! Line-delimited JSON. The header names the producing method:
//!
//! ```text
//! {"format_version":1,"kind":"attribution","source":"model","count":2}
//! {"journey_id":"u3#0","weights":[0.7,0.3],"conversion_prob":0.41}
//! {"journey_id":"u9#0","weights":[1.0],"conversion_prob":0.08}
//! ```
//!
//! `conversion_prob` is present only for sources that predict conversion.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{read_jsonl, write_jsonl, Journey};
use crate::error::{Error, Result};
use crate::model::AttributionResult;

pub const ATTRIBUTION_FORMAT_VERSION: u32 = 1;

/// Slack allowed when checking that credit sums to one.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionHeader {
    pub format_version: u32,
    pub kind: String,
    pub source: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionRecord {
    pub journey_id: String,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversion_prob: Option<f64>,
}

impl AttributionRecord {
    pub fn from_result(journey: &Journey, result: &AttributionResult) -> Self {
        AttributionRecord {
            journey_id: journey.id.clone(),
            weights: result.attention.clone(),
            conversion_prob: Some(result.conversion_prob),
        }
    }
}

/// Attribution records keyed by journey id.
#[derive(Clone, Debug, PartialEq)]
pub struct Attributions {
    pub source: String,
    pub records: Vec<AttributionRecord>,
    index: HashMap<String, usize>,
}

impl Attributions {
    pub fn new(source: impl Into<String>, records: Vec<AttributionRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.weights.is_empty() {
                return Err(Error::invalid(format!("attribution for `{}` is empty", r.journey_id)));
            }
            if r.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::invalid(format!(
                    "attribution for `{}` has negative or non-finite weights",
                    r.journey_id
                )));
            }
            let sum: f64 = r.weights.iter().sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(Error::invalid(format!(
                    "attribution for `{}` sums to {sum}, not 1",
                    r.journey_id
                )));
            }
            if let Some(p) = r.conversion_prob {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::invalid(format!(
                        "conversion probability {p} for `{}` outside [0, 1]",
                        r.journey_id
                    )));
                }
            }
            if index.insert(r.journey_id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate attribution for `{}`", r.journey_id)));
            }
        }
        Ok(Attributions {
            source: source.into(),
            records,
            index,
        })
    }

    pub fn get(&self, journey_id: &str) -> Option<&AttributionRecord> {
        self.index.get(journey_id).map(|&i| &self.records[i])
    }

    /// The record for `journey`, checked against its length.
    pub fn for_journey(&self, journey: &Journey) -> Result<&AttributionRecord> {
        let r = self
            .get(&journey.id)
            .ok_or_else(|| Error::invalid(format!("no attribution for journey `{}`", journey.id)))?;
        if r.weights.len() != journey.len() {
            return Err(Error::invalid(format!(
                "attribution for `{}` has {} weights, journey has {} touchpoints",
                journey.id,
                r.weights.len(),
                journey.len()
            )));
        }
        Ok(r)
    }

    /// Attributed weight mass per channel, summed over `journeys`.
    pub fn channel_mass(&self, journeys: &[Journey], num_channels: usize) -> Result<Vec<f64>> {
        let mut mass = vec![0.0; num_channels];
        for j in journeys {
            let r = self.for_journey(j)?;
            for (tp, w) in j.touchpoints.iter().zip(&r.weights) {
                mass[tp.channel] += w;
            }
        }
        Ok(mass)
    }
}

pub fn write_attributions(path: &Path, attributions: &Attributions) -> Result<()> {
    let header = AttributionHeader {
        format_version: ATTRIBUTION_FORMAT_VERSION,
        kind: "attribution".into(),
        source: attributions.source.clone(),
        count: attributions.records.len(),
    };
    write_jsonl(path, &header, &attributions.records)
}

pub fn read_attributions(path: &Path) -> Result<Attributions> {
    let (header, records): (AttributionHeader, Vec<AttributionRecord>) = read_jsonl(path)?;
    let ctx = || path.display().to_string();
    if header.format_version != ATTRIBUTION_FORMAT_VERSION || header.kind != "attribution" {
        return Err(Error::format(
            ctx(),
            format!("unsupported header: kind `{}` version {}", header.kind, header.format_version),
        ));
    }
    if header.count != records.len() {
        return Err(Error::format(
            ctx(),
            format!("header announces {} records, found {}", header.count, records.len()),
        ));
    }
    Attributions::new(header.source, records).map_err(|e| Error::format(ctx(), e))
}

/// Journeys grouped by user id, in id order.
pub fn journeys_by_user(journeys: &[Journey]) -> BTreeMap<&str, Vec<&Journey>> {
    let mut out: BTreeMap<&str, Vec<&Journey>> = BTreeMap::new();
    for j in journeys {
        out.entry(j.user_id.as_str()).or_default().push(j);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, weights: Vec<f64>) -> AttributionRecord {
        AttributionRecord {
            journey_id: id.into(),
            weights,
            conversion_prob: None,
        }
    }

    #[test]
    fn rejects_bad_records() {
        assert!(Attributions::new("x", vec![rec("a", vec![0.5, 0.4])]).is_err());
        assert!(Attributions::new("x", vec![rec("a", vec![1.5, -0.5])]).is_err());
        assert!(Attributions::new("x", vec![rec("a", vec![])]).is_err());
        assert!(Attributions::new("x", vec![rec("a", vec![1.0]), rec("a", vec![1.0])]).is_err());
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let mut r = rec("u1#0", vec![0.25, 0.75]);
        r.conversion_prob = Some(0.3);
        let a = Attributions::new("model", vec![r, rec("u2#0", vec![1.0])]).unwrap();
        write_attributions(&path, &a).unwrap();
        let b = read_attributions(&path).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.get("u1#0").unwrap().weights, vec![0.25, 0.75]);
        assert!(b.get("zz").is_none());
    }
}
