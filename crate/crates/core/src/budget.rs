//! ROI-proportional budget allocation and replay of test impressions under
//! per-channel budgets.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::attribution::Attributions;
use crate::data::Journey;
use crate::error::{Error, Result};

/// Attributed conversion value per unit of spend, per channel.
///
/// The numerator sums each converted journey's attribution mass on channel
/// `k` times `value`; the denominator is the cost of every impression on `k`.
/// Channels without spend get ROI 0.
pub fn channel_roi(journeys: &[Journey], attributions: &Attributions, num_channels: usize, value: f64) -> Result<Vec<f64>> {
    let mut credit = vec![0.0; num_channels];
    let mut cost = vec![0.0; num_channels];
    for j in journeys {
        let r = attributions.for_journey(j)?;
        for (tp, w) in j.touchpoints.iter().zip(&r.weights) {
            if tp.channel >= num_channels {
                return Err(Error::invalid(format!("journey `{}` uses unknown channel {}", j.id, tp.channel)));
            }
            if tp.cost.is_nan() || tp.cost < 0.0 {
                return Err(Error::invalid(format!("journey `{}` has negative cost {}", j.id, tp.cost)));
            }
            if j.converted {
                credit[tp.channel] += w * value;
            }
            cost[tp.channel] += tp.cost;
        }
    }
    Ok(credit
        .iter()
        .zip(&cost)
        .enumerate()
        .map(|(k, (&c, &s))| {
            if s > 0.0 {
                c / s
            } else {
                log::warn!("channel {k} has no spend; its ROI is set to 0");
                0.0
            }
        })
        .collect())
}

/// Splits `total` across channels in proportion to ROI.
pub fn allocate(roi: &[f64], total: f64) -> Result<Vec<f64>> {
    if roi.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::invalid(format!("ROI values must be finite and >= 0: {roi:?}")));
    }
    let sum: f64 = roi.iter().sum();
    if sum <= 0.0 {
        return Err(Error::invalid("every channel has zero ROI; nothing to allocate by"));
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::invalid(format!("total budget {total} must be > 0")));
    }
    Ok(roi.iter().map(|r| r / sum * total).collect())
}

/// One impression on the replay timeline.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayImpression {
    pub journey_id: String,
    pub position: usize,
    pub channel: usize,
    pub cost: f64,
    pub timestamp: i64,
}

/// Every touchpoint of `journeys`, ordered by time, then journey id, then
/// position.
pub fn timeline(journeys: &[Journey]) -> Vec<ReplayImpression> {
    let mut out: Vec<ReplayImpression> = journeys
        .iter()
        .flat_map(|j| {
            j.touchpoints.iter().enumerate().map(move |(position, tp)| ReplayImpression {
                journey_id: j.id.clone(),
                position,
                channel: tp.channel,
                cost: tp.cost,
                timestamp: tp.timestamp,
            })
        })
        .collect();
    sort_timeline(&mut out);
    out
}

fn sort_timeline(impressions: &mut [ReplayImpression]) {
    impressions.sort_by(|a, b| {
        (a.timestamp, &a.journey_id, a.position).cmp(&(b.timestamp, &b.journey_id, b.position))
    });
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub journeys: usize,
    pub true_conversions: usize,
    pub blacklisted: usize,
    /// Budget consumed per channel.
    pub spent: Vec<f64>,
    pub remaining: Vec<f64>,
    pub expenditure: f64,
    /// Expenditure per true conversion; `None` when there are none.
    pub cpa: Option<f64>,
    pub cvr: f64,
}

/// Serves impressions in time order against per-channel budgets.
///
/// `converted` lists every journey of the replay with its label. An
/// impression whose channel cannot cover its cost (times `cost_scale`)
/// blacklists its journey; later impressions of blacklisted journeys are
/// skipped, and costs already paid stay paid. True conversions are converted
/// journeys that were never blacklisted.
pub fn replay(
    impressions: &[ReplayImpression],
    converted: &HashMap<String, bool>,
    budgets: &[f64],
    cost_scale: f64,
) -> Result<ReplayOutcome> {
    if !(cost_scale > 0.0 && cost_scale.is_finite()) {
        return Err(Error::invalid(format!("cost scale {cost_scale} must be > 0")));
    }
    if budgets.iter().any(|b| b.is_nan() || *b < 0.0) {
        return Err(Error::invalid(format!("budgets must be >= 0: {budgets:?}")));
    }
    let mut ordered = impressions.to_vec();
    sort_timeline(&mut ordered);

    let mut remaining = budgets.to_vec();
    let mut spent = vec![0.0; budgets.len()];
    let mut blacklist: HashMap<&str, ()> = HashMap::new();
    for imp in &ordered {
        if !converted.contains_key(&imp.journey_id) {
            return Err(Error::UnknownJourney(imp.journey_id.clone()));
        }
        if imp.channel >= budgets.len() {
            return Err(Error::invalid(format!(
                "impression of `{}` on channel {} without a budget",
                imp.journey_id, imp.channel
            )));
        }
        if imp.cost.is_nan() || imp.cost < 0.0 {
            return Err(Error::invalid(format!("impression of `{}` has cost {}", imp.journey_id, imp.cost)));
        }
        if blacklist.contains_key(imp.journey_id.as_str()) {
            continue;
        }
        let cost = imp.cost * cost_scale;
        if remaining[imp.channel] < cost {
            blacklist.insert(&imp.journey_id, ());
        } else {
            remaining[imp.channel] -= cost;
            spent[imp.channel] += cost;
        }
    }
    let true_conversions = converted
        .iter()
        .filter(|(id, &c)| c && !blacklist.contains_key(id.as_str()))
        .count();
    let expenditure: f64 = spent.iter().sum();
    let n = converted.len();
    Ok(ReplayOutcome {
        journeys: n,
        true_conversions,
        blacklisted: blacklist.len(),
        spent,
        remaining,
        expenditure,
        cpa: (true_conversions > 0).then(|| expenditure / true_conversions as f64),
        cvr: if n == 0 { 0.0 } else { true_conversions as f64 / n as f64 },
    })
}

pub const DEFAULT_FRACTIONS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];
/// Cost multiplier applied to raw impression costs before replay.
pub const DEFAULT_COST_SCALE: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub fraction: f64,
    pub cost_scale: f64,
    /// Whether channel budgets were lifted entirely.
    pub uncapped: bool,
    pub roi: Vec<f64>,
    /// Allocated budget per channel (scaled cost units). For uncapped runs,
    /// the scaled spend each channel would need to serve everything.
    pub budgets: Vec<f64>,
    pub total_budget: f64,
    pub outcome: ReplayOutcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    pub cost_scale: f64,
    /// Conversion value in the ROI numerator.
    pub value: f64,
    pub uncapped: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            cost_scale: DEFAULT_COST_SCALE,
            value: 1.0,
            uncapped: false,
        }
    }
}

/// Replays `journeys` once per budget fraction, where fraction `f` allots
/// `f` times the total scaled cost of all impressions by ROI.
pub fn budget_sweep(
    journeys: &[Journey],
    attributions: &Attributions,
    num_channels: usize,
    config: &SweepConfig,
) -> Result<Vec<BudgetReport>> {
    if config.fractions.is_empty() {
        return Err(Error::invalid("no budget fractions given"));
    }
    if let Some(f) = config.fractions.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
        return Err(Error::invalid(format!("budget fraction {f} must be > 0")));
    }
    let roi = channel_roi(journeys, attributions, num_channels, config.value)?;
    let events = timeline(journeys);
    let converted: HashMap<String, bool> = journeys.iter().map(|j| (j.id.clone(), j.converted)).collect();
    if converted.len() != journeys.len() {
        return Err(Error::invalid("duplicate journey ids in replay set"));
    }
    let mut channel_cost = vec![0.0; num_channels];
    for e in &events {
        channel_cost[e.channel] += e.cost * config.cost_scale;
    }
    let total_cost: f64 = channel_cost.iter().sum();

    config
        .fractions
        .iter()
        .map(|&fraction| {
            let (budgets, total_budget, replay_budgets) = if config.uncapped {
                (channel_cost.clone(), total_cost, vec![f64::INFINITY; num_channels])
            } else {
                let total = fraction * total_cost;
                let b = allocate(&roi, total)?;
                (b.clone(), total, b)
            };
            let mut outcome = replay(&events, &converted, &replay_budgets, config.cost_scale)?;
            if config.uncapped {
                outcome.remaining = vec![0.0; num_channels];
            }
            Ok(BudgetReport {
                fraction,
                cost_scale: config.cost_scale,
                uncapped: config.uncapped,
                roi: roi.clone(),
                budgets,
                total_budget,
                outcome,
            })
        })
        .collect()
}

/// Header and rows of the fraction table.
pub fn sweep_table(reports: &[BudgetReport]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec!["fraction", "cpa", "cvr", "true_conversions", "expenditure", "blacklisted"];
    let rows = reports
        .iter()
        .map(|r| {
            vec![
                r.fraction.to_string(),
                r.outcome.cpa.map(|c| c.to_string()).unwrap_or_default(),
                r.outcome.cvr.to_string(),
                r.outcome.true_conversions.to_string(),
                r.outcome.expenditure.to_string(),
                r.outcome.blacklisted.to_string(),
            ]
        })
        .collect();
    (header, rows)
}
