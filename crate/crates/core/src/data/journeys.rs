use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;

use super::types::{Impression, RawJourney};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct JourneyStats {
    pub emitted: usize,
    pub dropped_off_channel: usize,
    pub dropped_too_long: usize,
}

/// Cuts each user's impression stream into journeys.
///
/// A conversion-bearing impression closes its journey (inclusive), and any
/// impressions after the last conversion form a trailing non-converting
/// journey. Journeys that touch a channel outside `selected_channels`, or
/// that are longer than `max_len`, are dropped whole.
///
/// `impressions` must be sorted by `(user_id, timestamp)`.
pub fn build_journeys(
    impressions: &[Impression],
    selected_channels: &[String],
    max_len: usize,
) -> Result<(Vec<RawJourney>, JourneyStats)> {
    if selected_channels.is_empty() {
        return Err(Error::invalid("no channels selected"));
    }
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let selected: HashSet<&str> = selected_channels.iter().map(String::as_str).collect();
    let mut stats = JourneyStats::default();
    let mut out = Vec::new();

    let mut emit = |user: &str, ordinal: &mut usize, imps: Vec<Impression>, converted: bool| {
        let id = format!("{user}#{ordinal}");
        *ordinal += 1;
        if imps.iter().any(|i| !selected.contains(i.channel_id.as_str())) {
            stats.dropped_off_channel += 1;
        } else if imps.len() > max_len {
            stats.dropped_too_long += 1;
        } else {
            stats.emitted += 1;
            out.push(RawJourney {
                id,
                user_id: user.to_string(),
                impressions: imps,
                converted,
            });
        }
    };

    for user_rows in impressions.chunk_by(|a, b| a.user_id == b.user_id) {
        let user = user_rows[0].user_id.as_str();
        let mut ordinal = 0;
        let mut current = Vec::new();
        for imp in user_rows {
            current.push(imp.clone());
            if imp.conversion_id.is_some() {
                emit(user, &mut ordinal, std::mem::take(&mut current), true);
            }
        }
        if !current.is_empty() {
            emit(user, &mut ordinal, current, false);
        }
    }
    Ok((out, stats))
}

/// Picks `count` channels uniformly at random (seeded) among those present in
/// the log, returned in sorted order.
pub fn select_random_channels(impressions: &[Impression], count: usize, seed: u64) -> Vec<String> {
    let mut all: Vec<String> = impressions
        .iter()
        .map(|i| i.channel_id.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = stream_rng(seed, "channel-selection", 0);
    all.shuffle(&mut rng);
    all.truncate(count);
    all.sort();
    all
}

/// Channels ranked by impression count, most frequent first.
pub fn channel_frequencies(impressions: &[Impression]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for i in impressions {
        *counts.entry(&i.channel_id).or_default() += 1;
    }
    let mut v: Vec<_> = counts.into_iter().map(|(k, c)| (k.to_string(), c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}
