//! Run manifests written by the `prune` command.
//!
//! A manifest plus the trace it names is enough to reproduce a run. All
//! wall-clock measurements live in [`Timing`] so comparisons can mask them.

use serde::{Deserialize, Serialize};

use crate::estimator::EstimatorConfig;
use crate::selector::{Budget, PruneConfig, SelectionResult};

pub const ENGINE_NAME: &str = "vlaprune";
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub requested_budget: Budget,
    pub prune: PruneConfig,
    pub estimator: EstimatorConfig,
    pub flops_preset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceInfo {
    pub path: String,
    pub sha256: String,
    pub episode_id: String,
    pub m_visual: usize,
    pub n_text: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub t: u64,
    pub retained: Vec<usize>,
    pub pool_size: usize,
    pub c_vl_size: usize,
    pub c_act_size: usize,
    pub min_pairwise_distance: f64,
    pub warmup_applied: bool,
}

impl FrameSummary {
    pub fn new(t: u64, r: &SelectionResult) -> Self {
        FrameSummary {
            t,
            retained: r.retained.clone(),
            pool_size: r.pool_size,
            c_vl_size: r.c_vl.len(),
            c_act_size: r.c_act.len(),
            min_pairwise_distance: r.min_pairwise_distance,
            warmup_applied: r.warmup_applied,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub frames: usize,
    pub post_warmup_frames: usize,
    /// Means over post-warm-up frames.
    pub mean_pool_size: f64,
    pub mean_min_distance: f64,
    pub mean_retained: f64,
    pub flops_ratio: f64,
}

impl Aggregate {
    pub fn from_frames(frames: &[FrameSummary], flops_ratio: f64) -> Self {
        let post: Vec<&FrameSummary> = frames.iter().filter(|f| !f.warmup_applied).collect();
        let mean = |g: &dyn Fn(&FrameSummary) -> f64| -> f64 {
            if post.is_empty() {
                0.0
            } else {
                post.iter().map(|f| g(f)).sum::<f64>() / post.len() as f64
            }
        };
        Aggregate {
            frames: frames.len(),
            post_warmup_frames: post.len(),
            mean_pool_size: mean(&|f| f.pool_size as f64),
            mean_min_distance: mean(&|f| f.min_pairwise_distance),
            mean_retained: mean(&|f| f.retained.len() as f64),
            flops_ratio,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
    pub mean_select_us: f64,
    pub max_select_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub engine: String,
    pub engine_version: String,
    pub config: RunConfig,
    pub trace: TraceInfo,
    pub frames: Vec<FrameSummary>,
    pub aggregate: Aggregate,
    pub timing: Timing,
}

impl RunManifest {
    /// Copy with every timing field zeroed.
    pub fn without_timing(&self) -> Self {
        RunManifest { timing: Timing::default(), ..self.clone() }
    }
}
