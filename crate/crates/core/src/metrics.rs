//! Top-k overlap diagnostics across stages and timesteps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, EstimatorState};
use crate::scoring::ScoreVector;
use crate::selector::top_k_indices;
use crate::trace::FrameScores;

/// `|a ∩ b| / k` for two index sets of equal size `k`.
pub fn overlap_ratio(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Empty("index set"));
    }
    if a.len() != b.len() {
        return Err(Error::shape("overlap operands", a.len(), b.len()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_unstable();
    y.sort_unstable();
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < x.len() && j < y.len() {
        match x[i].cmp(&y[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(common as f64 / a.len() as f64)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub k: usize,
    /// Per frame: Top-k of prefill scores against Top-k of decode scores.
    pub prefill_vs_decode: Vec<f64>,
    /// Per consecutive pair: decode Top-k at `t` against `t - 1`.
    pub decode_t_vs_tminus1: Vec<f64>,
    pub mean_prefill_vs_decode: f64,
    pub mean_decode_t_vs_tminus1: f64,
}

/// Per-frame action scores used for overlap analysis (all recorded layers).
pub fn analysis_action_scores(frames: &[FrameScores]) -> Result<Vec<ScoreVector>> {
    frames.iter().map(FrameScores::action_scores_all_layers).collect()
}

pub fn episode_overlap_report(frames: &[FrameScores], k: usize) -> Result<OverlapReport> {
    if frames.len() < 2 {
        return Err(Error::out_of_range("frame count", frames.len(), ">= 2"));
    }
    let act = analysis_action_scores(frames)?;
    let act_top: Vec<Vec<usize>> = act.iter().map(|s| top_k_indices(s, k)).collect::<Result<_>>()?;

    let prefill_vs_decode = frames
        .iter()
        .zip(&act_top)
        .map(|(f, a)| overlap_ratio(&top_k_indices(&f.prefill, k)?, a))
        .collect::<Result<Vec<_>>>()?;
    let decode_t_vs_tminus1 = act_top.windows(2).map(|w| overlap_ratio(&w[1], &w[0])).collect::<Result<Vec<_>>>()?;

    Ok(OverlapReport {
        k,
        mean_prefill_vs_decode: mean(&prefill_vs_decode),
        mean_decode_t_vs_tminus1: mean(&decode_t_vs_tminus1),
        prefill_vs_decode,
        decode_t_vs_tminus1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub k: usize,
    pub estimator: EstimatorConfig,
    /// Timesteps with a warm estimator and their forecast overlaps.
    pub timesteps: Vec<u64>,
    pub overlap: Vec<f64>,
    pub mean_overlap: f64,
}

/// How well the estimator's forecast Top-k matches the frame's actual
/// action Top-k, over every frame where the estimator is warm.
///
/// Uses the same latter-half layer averaging as the pruning path.
pub fn forecast_overlap(frames: &[FrameScores], estimator: EstimatorConfig, k: usize) -> Result<ForecastReport> {
    let mut state = EstimatorState::new(estimator)?;
    let mut timesteps = Vec::new();
    let mut overlap = Vec::new();
    for f in frames {
        let actual = f.action_scores()?;
        if state.is_warm() {
            let forecast = state.estimate()?;
            overlap.push(overlap_ratio(&top_k_indices(&forecast, k)?, &top_k_indices(&actual, k)?)?);
            timesteps.push(f.timestep);
        }
        state.observe(actual)?;
    }
    Ok(ForecastReport { k, estimator, mean_overlap: mean(&overlap), timesteps, overlap })
}

/// Default analysis depths: 12.5 %, 25 % and 50 % of `m`.
pub fn default_ks(m: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = [8, 4, 2].iter().map(|d| (m / d).max(1)).collect();
    ks.dedup();
    ks
}
