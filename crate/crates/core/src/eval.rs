//! Prediction metrics and distribution summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Journey;
use crate::error::{Error, Result};
use crate::model::{binary_cross_entropy, AttributionResult};

/// Mean binary cross-entropy of conversion predictions over journeys.
pub fn log_loss_conv(predictions: &[f64], labels: &[bool]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    mean_bce(predictions.iter().zip(labels).map(|(&p, &y)| (p, y)))
}

/// Mean binary cross-entropy of click predictions over the steps where
/// `masks` is set.
pub fn log_loss_click(predictions: &[f64], labels: &[bool], masks: &[bool]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.len() != masks.len() {
        return Err(Error::invalid(format!(
            "click predictions ({}), labels ({}) and masks ({}) differ in length",
            predictions.len(),
            labels.len(),
            masks.len()
        )));
    }
    mean_bce(
        predictions
            .iter()
            .zip(labels)
            .zip(masks)
            .filter(|(_, &m)| m)
            .map(|((&p, &y), _)| (p, y)),
    )
}

fn mean_bce(pairs: impl Iterator<Item = (f64, bool)>) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for (p, y) in pairs {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("prediction {p} outside [0, 1]")));
        }
        total += binary_cross_entropy(p, if y { 1.0 } else { 0.0 });
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("log-loss over zero examples"));
    }
    Ok(total / n as f64)
}

/// Area under the ROC curve: the fraction of positive/negative pairs ranked
/// correctly, ties counting one half. Computed from midranks in O(n log n).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::invalid(format!("score {s} is not comparable")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::invalid(format!(
            "AUC needs both classes, got {positives} positive and {negatives} negative labels"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the rank sum of positives, so midranks stay integral.
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (0-based) share the midrank (start + end + 1) / 2 (1-based).
        let doubled_midrank = (start + end + 1) as u128;
        let pos_in_tie = order[start..end].iter().filter(|&&i| labels[i]).count() as u128;
        doubled_rank_sum += doubled_midrank * pos_in_tie;
        start = end;
    }
    let p = positives as u128;
    // U = R - P(P+1)/2, kept doubled.
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2.0 * positives as f64 * negatives as f64))
}

/// Five-number summary with Tukey whiskers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub count: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Smallest observation at or above `q1 - 1.5 * IQR`.
    pub whisker_low: f64,
    /// Largest observation at or below `q3 + 1.5 * IQR`.
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

impl BoxplotStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("box plot of an empty group"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("box plot value".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.5), quantile(&sorted, 0.75));
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside = || sorted.iter().copied().filter(|&v| v >= lo && v <= hi);
        Ok(BoxplotStats {
            count: sorted.len(),
            q1,
            median,
            q3,
            whisker_low: inside().next().unwrap_or(q1),
            whisker_high: inside().next_back().unwrap_or(q3),
            outliers: sorted.iter().copied().filter(|&v| v < lo || v > hi).collect(),
        })
    }
}

/// Linear interpolation between order statistics at position `q * (n - 1)`.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, frac) = (pos.floor() as usize, pos.fract());
    if lo + 1 >= sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Box-plot statistics for every group.
pub fn boxplot_stats<K: Ord + Clone>(groups: &BTreeMap<K, Vec<f64>>) -> Result<BTreeMap<K, BoxplotStats>> {
    groups
        .iter()
        .map(|(k, v)| Ok((k.clone(), BoxplotStats::from_values(v)?)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub journeys: usize,
    pub touchpoints: usize,
    pub conversions: usize,
    pub clicks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub log_loss_conversion: f64,
    pub log_loss_click: f64,
    /// Conversion AUC; absent when the labels contain a single class.
    pub auc: Option<f64>,
    pub counts: MetricCounts,
}

impl MetricReport {
    /// Scores `results` (aligned with `journeys`) against the journey labels.
    pub fn compute(journeys: &[Journey], results: &[AttributionResult]) -> Result<Self> {
        if journeys.len() != results.len() {
            return Err(Error::invalid(format!(
                "{} results for {} journeys",
                results.len(),
                journeys.len()
            )));
        }
        let conv_pred: Vec<f64> = results.iter().map(|r| r.conversion_prob).collect();
        let conv_label: Vec<bool> = journeys.iter().map(|j| j.converted).collect();
        let mut click_pred = Vec::new();
        let mut click_label = Vec::new();
        for (j, r) in journeys.iter().zip(results) {
            if r.click_probs.len() != j.len() {
                return Err(Error::invalid(format!("result for `{}` has wrong length", j.id)));
            }
            click_pred.extend(&r.click_probs);
            click_label.extend(j.touchpoints.iter().map(|t| t.click));
        }
        let masks = vec![true; click_pred.len()];
        let counts = MetricCounts {
            journeys: journeys.len(),
            touchpoints: click_pred.len(),
            conversions: conv_label.iter().filter(|&&c| c).count(),
            clicks: click_label.iter().filter(|&&c| c).count(),
        };
        let auc = if counts.conversions == 0 || counts.conversions == counts.journeys {
            log::warn!("conversion labels are single-class; AUC omitted");
            None
        } else {
            Some(auc(&conv_pred, &conv_label)?)
        };
        Ok(MetricReport {
            log_loss_conversion: log_loss_conv(&conv_pred, &conv_label)?,
            log_loss_click: log_loss_click(&click_pred, &click_label, &masks)?,
            auc,
            counts,
        })
    }

    /// `(metric, value)` rows for flat-table export.
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("log_loss_conversion", self.log_loss_conversion.to_string()),
            ("log_loss_click", self.log_loss_click.to_string()),
            ("auc", self.auc.map(|a| a.to_string()).unwrap_or_default()),
            ("journeys", self.counts.journeys.to_string()),
            ("touchpoints", self.counts.touchpoints.to_string()),
            ("conversions", self.counts.conversions.to_string()),
            ("clicks", self.counts.clicks.to_string()),
        ]
    }
}
