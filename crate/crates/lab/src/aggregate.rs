//! Summary statistics across repetitions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::records::{EpisodeRow, ProbeRow};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot summarize an empty group")]
pub struct EmptyGroup;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation, 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean, sample standard deviation and range. Values are accumulated in
/// sorted order, relative to the minimum, so the result does not depend on
/// input order and a constant input has exactly that constant as its mean.
pub fn summarize(values: &[f64]) -> Result<Stats, EmptyGroup> {
    if values.is_empty() {
        return Err(EmptyGroup);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let offset = v.iter().map(|x| x - v[0]).sum::<f64>() / n as f64;
    let mean = v[0] + offset;
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    let std = if n > 1 {
        (dev.iter().sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Stats {
        n,
        mean,
        std,
        min: v[0],
        max: v[n - 1],
    })
}

pub const EPISODE_METRICS: [&str; 4] = [
    "sum_reward",
    "tx_interrupted_ratio",
    "urllc_missed_ratio",
    "critical_missed_ratio",
];

pub const PROBE_METRICS: [&str; 4] = [
    "md",
    "logstd_wait",
    "mean_logstd_punct",
    "steps_until_explore",
];

fn episode_metric(row: &EpisodeRow, metric: &str) -> f64 {
    match metric {
        "sum_reward" => row.sum_reward,
        "tx_interrupted_ratio" => row.tx_interrupted_ratio,
        "urllc_missed_ratio" => row.urllc_missed_ratio,
        "critical_missed_ratio" => row.critical_missed_ratio,
        other => panic!("unknown episode metric {other}"),
    }
}

fn probe_metric(row: &ProbeRow, metric: &str) -> Option<f64> {
    match metric {
        "md" => row.md,
        "logstd_wait" => row.logstd_wait,
        "mean_logstd_punct" => row.mean_logstd_punct,
        "steps_until_explore" => row.steps_until_explore.map(|s| s as f64),
        other => panic!("unknown probe metric {other}"),
    }
}

/// One line of the summary table. `episode` is empty for probe metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub agent: String,
    pub episode: Option<usize>,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "agent", "episode", "metric", "n", "mean", "std", "min", "max",
];

impl SummaryRow {
    fn new(agent: &str, episode: Option<usize>, metric: &str, s: Stats) -> Self {
        Self {
            agent: agent.to_string(),
            episode,
            metric: metric.to_string(),
            n: s.n,
            mean: s.mean,
            std: s.std,
            min: s.min,
            max: s.max,
        }
    }

    pub fn stats(&self) -> Stats {
        Stats {
            n: self.n,
            mean: self.mean,
            std: self.std,
            min: self.min,
            max: self.max,
        }
    }
}

/// Per agent, per episode, per metric statistics across runs.
pub fn aggregate_episodes(rows: &[EpisodeRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(&str, usize), Vec<&EpisodeRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.agent.as_str(), r.episode))
            .or_default()
            .push(r);
    }
    let mut out = Vec::new();
    for metric in EPISODE_METRICS {
        for (&(agent, episode), group) in &groups {
            let values: Vec<f64> = group.iter().map(|r| episode_metric(r, metric)).collect();
            let s = summarize(&values).expect("groups are never empty");
            out.push(SummaryRow::new(agent, Some(episode), metric, s));
        }
    }
    out
}

/// Per agent, per metric statistics over all probe rows that carry the metric.
pub fn aggregate_probes(rows: &[ProbeRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<&str, Vec<&ProbeRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.agent.as_str()).or_default().push(r);
    }
    let mut out = Vec::new();
    for metric in PROBE_METRICS {
        for (&agent, group) in &groups {
            let values: Vec<f64> = group
                .iter()
                .filter_map(|r| probe_metric(r, metric))
                .collect();
            if let Ok(s) = summarize(&values) {
                out.push(SummaryRow::new(agent, None, metric, s));
            }
        }
    }
    out
}
