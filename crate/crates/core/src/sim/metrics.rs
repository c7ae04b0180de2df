//! Aggregate tracking metrics: AR, EL, SR, TSR and CAR.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::episode::{EpisodeLog, StepRecord};
use crate::{Error, Result};

/// Horizon of the long-run success rate.
pub const TSR_HORIZON: usize = 1500;
/// Weight of lateral motion relative to yaw when scoring action direction.
pub const CAR_LATERAL_WEIGHT: f64 = 0.2;
pub const DEFAULT_DEAD_ZONE_PX: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    #[serde(rename = "AR")]
    pub ar: f64,
    #[serde(rename = "EL")]
    pub el: f64,
    #[serde(rename = "SR")]
    pub sr: f64,
    /// Only defined when every episode was allowed to run to `TSR_HORIZON`.
    #[serde(rename = "TSR")]
    pub tsr: Option<f64>,
    /// Absent when no step was outside the dead zone.
    #[serde(rename = "CAR")]
    pub car: Option<f64>,
    pub episodes: usize,
    pub seed: u64,
}

fn eligible(step: &StepRecord, image_w: usize, dead_zone_px: u32) -> Option<f64> {
    let offset = step.bbox?[0] - image_w as f64 / 2.0;
    (offset.abs() > dead_zone_px as f64).then_some(offset)
}

fn car_counts(log: &EpisodeLog, dead_zone_px: u32) -> (usize, usize) {
    let mut hits = 0;
    let mut total = 0;
    for s in &log.steps {
        let Some(offset) = eligible(s, log.image_w, dead_zone_px) else {
            continue;
        };
        total += 1;
        // Positive yaw and lateral motion both move the view to the right,
        // which is what a target right of centre needs.
        let turn = s.action[3] + CAR_LATERAL_WEIGHT * s.action[1];
        if turn != 0.0 && turn.signum() == offset.signum() {
            hits += 1;
        }
    }
    (hits, total)
}

/// Fraction of steps outside the dead zone whose action turns toward the
/// target.
pub fn correct_action_rate(log: &EpisodeLog, dead_zone_px: u32) -> Result<f64> {
    let (hits, total) = car_counts(log, dead_zone_px);
    if total == 0 {
        return Err(Error::NoEligibleSteps);
    }
    Ok(hits as f64 / total as f64)
}

pub fn compute_metrics(logs: &[EpisodeLog], horizon: usize, scenario: &str, seed: u64) -> Result<Metrics> {
    if logs.is_empty() {
        return Err(Error::EmptyLogs);
    }
    let n = logs.len() as f64;
    let ar = logs.iter().map(EpisodeLog::total_reward).sum::<f64>() / n;
    let el = logs.iter().map(|l| l.len() as f64).sum::<f64>() / n;
    let sr = logs.iter().filter(|l| l.reached(horizon)).count() as f64 / n;
    let tsr = logs
        .iter()
        .all(|l| l.max_steps >= TSR_HORIZON)
        .then(|| logs.iter().filter(|l| l.reached(TSR_HORIZON)).count() as f64 / n);
    let (hits, total) = logs
        .iter()
        .map(|l| car_counts(l, DEFAULT_DEAD_ZONE_PX))
        .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(Metrics {
        scenario: scenario.to_string(),
        ar,
        el,
        sr,
        tsr,
        car: (total > 0).then(|| hits as f64 / total as f64),
        episodes: logs.len(),
        seed,
    })
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[Metrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
