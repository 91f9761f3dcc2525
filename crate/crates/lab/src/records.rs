//! CSV rows for per-episode metrics and probe results.
//!
//! Floats are written in shortest round-trip form, so parsing a written file
//! reproduces every finite value bit for bit.

use std::path::Path;

use punctlab_core::agents::AgentKind;
use punctlab_core::trainer::EpisodeMetrics;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub run_id: String,
    pub agent: String,
    pub seed: u64,
    pub episode: usize,
    pub sum_reward: f64,
    pub tx_interrupted_ratio: f64,
    pub urllc_missed_ratio: f64,
    pub critical_missed_ratio: f64,
    pub epsilon_end: f64,
}

impl EpisodeRow {
    pub fn from_metrics(run_id: &str, agent: &str, seed: u64, m: &EpisodeMetrics) -> Self {
        Self {
            run_id: run_id.to_string(),
            agent: agent.to_string(),
            seed,
            episode: m.episode,
            sum_reward: m.sum_reward,
            tx_interrupted_ratio: m.tx_interrupted_ratio,
            urllc_missed_ratio: m.urllc_missed_ratio,
            critical_missed_ratio: m.critical_missed_ratio,
            epsilon_end: m.epsilon_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub run_id: String,
    pub agent: String,
    pub repetition: usize,
    /// Empty when the magnitude difference is undefined.
    pub md: Option<f64>,
    pub logstd_wait: Option<f64>,
    pub mean_logstd_punct: Option<f64>,
    pub steps_until_explore: Option<usize>,
}

pub fn run_id(kind: AgentKind, seed: u64) -> String {
    format!("{}-s{seed}", kind.as_str())
}

pub const EPISODE_HEADER: [&str; 9] = [
    "run_id",
    "agent",
    "seed",
    "episode",
    "sum_reward",
    "tx_interrupted_ratio",
    "urllc_missed_ratio",
    "critical_missed_ratio",
    "epsilon_end",
];

pub const PROBE_HEADER: [&str; 7] = [
    "run_id",
    "agent",
    "repetition",
    "md",
    "logstd_wait",
    "mean_logstd_punct",
    "steps_until_explore",
];

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> LabError + '_ {
    move |source| LabError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `rows` under `header`. The header is written even when there are
/// no rows.
pub fn write_csv<T: Serialize>(rows: &[T], header: &[&str], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(csv_err(path))
}

pub fn write_episodes(rows: &[EpisodeRow], path: &Path) -> Result<()> {
    write_csv(rows, &EPISODE_HEADER, path)
}

pub fn write_probes(rows: &[ProbeRow], path: &Path) -> Result<()> {
    write_csv(rows, &PROBE_HEADER, path)
}
