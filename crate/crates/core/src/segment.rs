//! User returns, three-way k-means segmentation, and per-group channel
//! affinity summaries.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{journeys_by_user, Attributions};
use crate::data::Journey;
use crate::error::{Error, Result};
use crate::eval::BoxplotStats;
use crate::rng::stream_rng;

pub const KMEANS_RESTARTS: usize = 100;
const KMEANS_MAX_ITERATIONS: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnGroup {
    Low,
    Medium,
    High,
}

impl ReturnGroup {
    pub const ALL: [ReturnGroup; 3] = [ReturnGroup::Low, ReturnGroup::Medium, ReturnGroup::High];
}

impl fmt::Display for ReturnGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReturnGroup::Low => "low",
            ReturnGroup::Medium => "medium",
            ReturnGroup::High => "high",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserReturn {
    pub user_id: String,
    pub mean_return: f64,
    pub group: ReturnGroup,
}

/// Mean of `a_t * y_hat / cost_t` over a user's touchpoints with positive
/// cost; `None` if there are none.
pub fn user_return(journeys: &[&Journey], attributions: &Attributions) -> Result<Option<f64>> {
    let (mut total, mut n) = (0.0, 0usize);
    for j in journeys {
        let r = attributions.for_journey(j)?;
        let y_hat = r.conversion_prob.ok_or_else(|| {
            Error::invalid(format!(
                "attribution for `{}` has no conversion probability; user returns need model output",
                j.id
            ))
        })?;
        for (tp, a) in j.touchpoints.iter().zip(&r.weights) {
            if tp.cost > 0.0 {
                total += a * y_hat / tp.cost;
                n += 1;
            } else {
                log::warn!("journey `{}`: skipping touchpoint with cost {}", j.id, tp.cost);
            }
        }
    }
    Ok((n > 0).then(|| total / n as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Ascending.
    pub centroids: Vec<f64>,
    /// Index into `centroids` for each input value.
    pub labels: Vec<usize>,
    /// Within-cluster sum of squares.
    pub inertia: f64,
}

fn nearest(x: f64, centroids: &[f64]) -> usize {
    let mut best = 0;
    for (i, c) in centroids.iter().enumerate().skip(1) {
        if (x - c).abs() < (x - centroids[best]).abs() {
            best = i;
        }
    }
    best
}

fn lloyd(values: &[f64], mut centroids: Vec<f64>) -> Clustering {
    let k = centroids.len();
    let mut labels: Vec<usize> = values.iter().map(|&x| nearest(x, &centroids)).collect();
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&x, &l) in values.iter().zip(&labels) {
            sums[l] += x;
            counts[l] += 1;
        }
        for i in 0..k {
            if counts[i] > 0 {
                centroids[i] = sums[i] / counts[i] as f64;
            }
        }
        let next: Vec<usize> = values.iter().map(|&x| nearest(x, &centroids)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let inertia = values
        .iter()
        .zip(&labels)
        .map(|(x, &l)| (x - centroids[l]).powi(2))
        .sum();
    Clustering {
        centroids,
        labels,
        inertia,
    }
}

fn plus_plus_seeds<R: Rng>(values: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    let mut centroids = vec![values[rng.random_range(0..values.len())]];
    while centroids.len() < k {
        let d2: Vec<f64> = values
            .iter()
            .map(|&x| centroids.iter().map(|c| (x - c).powi(2)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("a value away from every centroid");
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && u < d {
                pick = i;
                break;
            }
            u -= d;
        }
        centroids.push(values[pick]);
    }
    centroids
}

/// One-dimensional k-means with k-means++ seeding, keeping the best of
/// [`KMEANS_RESTARTS`] runs. Clusters are numbered by ascending centroid.
pub fn cluster_users(values: &[f64], k: usize, seed: u64) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("user return".into()));
    }
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::invalid(format!(
            "k-means with k = {k} needs at least {k} distinct values, got {}",
            distinct.len()
        )));
    }
    let mut best: Option<Clustering> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = stream_rng(seed, "kmeans", restart as u64);
        let run = lloyd(values, plus_plus_seeds(values, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| best.centroids[a].total_cmp(&best.centroids[b]));
    let mut rank = vec![0; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    Ok(Clustering {
        centroids: order.iter().map(|&c| best.centroids[c]).collect(),
        labels: best.labels.iter().map(|&l| rank[l]).collect(),
        inertia: best.inertia,
    })
}

/// Attribution mass per channel summed over a user's touchpoints.
pub fn user_affinity(journeys: &[&Journey], attributions: &Attributions, num_channels: usize) -> Result<Vec<f64>> {
    let mut mass = vec![0.0; num_channels];
    for j in journeys {
        let r = attributions.for_journey(j)?;
        for (tp, a) in j.touchpoints.iter().zip(&r.weights) {
            let slot = mass
                .get_mut(tp.channel)
                .ok_or_else(|| Error::invalid(format!("journey `{}` uses unknown channel {}", j.id, tp.channel)))?;
            *slot += a;
        }
    }
    Ok(mass)
}

/// Box-plot statistics of channel affinity per (group, channel).
pub fn channel_affinity_stats(
    users: &[UserReturn],
    journeys: &[Journey],
    attributions: &Attributions,
    num_channels: usize,
) -> Result<BTreeMap<(ReturnGroup, usize), BoxplotStats>> {
    let by_user = journeys_by_user(journeys);
    let mut values: BTreeMap<(ReturnGroup, usize), Vec<f64>> = BTreeMap::new();
    for u in users {
        let js = by_user
            .get(u.user_id.as_str())
            .ok_or_else(|| Error::invalid(format!("user `{}` has no journeys", u.user_id)))?;
        for (k, m) in user_affinity(js, attributions, num_channels)?.into_iter().enumerate() {
            values.entry((u.group, k)).or_default().push(m);
        }
    }
    values
        .into_iter()
        .map(|(key, v)| Ok((key, BoxplotStats::from_values(&v)?)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffinityRow {
    pub group: ReturnGroup,
    pub channel: String,
    pub stats: BoxplotStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub seed: u64,
    /// Low, medium and high centroids.
    pub centroids: Vec<f64>,
    /// Share of segmented users in each group, low to high.
    pub group_shares: Vec<f64>,
    pub users: Vec<UserReturn>,
    /// Users without any positively-costed touchpoint.
    pub excluded_users: Vec<String>,
    pub affinity: Vec<AffinityRow>,
}

/// Computes returns for every user in `journeys`, splits them into low,
/// medium and high groups, and summarizes channel affinity per group.
pub fn segment_users(
    journeys: &[Journey],
    attributions: &Attributions,
    channel_names: &[String],
    seed: u64,
) -> Result<SegmentReport> {
    let mut ids = Vec::new();
    let mut returns = Vec::new();
    let mut excluded_users = Vec::new();
    for (user, js) in journeys_by_user(journeys) {
        match user_return(&js, attributions)? {
            Some(r) => {
                ids.push(user.to_string());
                returns.push(r);
            }
            None => {
                log::warn!("user `{user}` has no costed touchpoints; excluded from segmentation");
                excluded_users.push(user.to_string());
            }
        }
    }
    let clustering = cluster_users(&returns, ReturnGroup::ALL.len(), seed)?;
    let users: Vec<UserReturn> = ids
        .into_iter()
        .zip(&returns)
        .zip(&clustering.labels)
        .map(|((user_id, &mean_return), &l)| UserReturn {
            user_id,
            mean_return,
            group: ReturnGroup::ALL[l],
        })
        .collect();
    let group_shares = ReturnGroup::ALL
        .iter()
        .map(|g| users.iter().filter(|u| u.group == *g).count() as f64 / users.len() as f64)
        .collect();
    let affinity = channel_affinity_stats(&users, journeys, attributions, channel_names.len())?
        .into_iter()
        .map(|((group, k), stats)| AffinityRow {
            group,
            channel: channel_names[k].clone(),
            stats,
        })
        .collect();
    Ok(SegmentReport {
        seed,
        centroids: clustering.centroids,
        group_shares,
        users,
        excluded_users,
        affinity,
    })
}
