//! Frame-by-frame replay of an episode through the estimator and selector.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimator::{EstimatorConfig, EstimatorState};
use crate::flops::{ModelDims, Preset};
use crate::scoring::{ScoreVector, TokenLayout};
use crate::selector::{select_frame, Budget, PruneConfig, SelectionResult};
use crate::trace::{synthesize_trace, Frame, Payload, SynthConfig, TraceHeader};

/// Drives one episode: select with history up to `t - 1`, then record the
/// action scores observed at `t`.
#[derive(Debug, Clone)]
pub struct Replayer {
    layout: TokenLayout,
    prune: PruneConfig,
    state: EstimatorState,
}

impl Replayer {
    pub fn new(layout: TokenLayout, prune: PruneConfig, estimator: EstimatorConfig) -> Result<Self> {
        prune.validate(layout.m_visual)?;
        Ok(Replayer { layout, prune, state: EstimatorState::new(estimator)? })
    }

    pub fn state(&self) -> &EstimatorState {
        &self.state
    }

    pub fn step(&mut self, frame: &Frame) -> Result<SelectionResult> {
        let scores = frame.scores(&self.layout)?;
        self.step_scores(&scores.prefill, scores.action_scores()?, &frame.embeddings)
    }

    /// Same as [`Replayer::step`] for callers that already hold the prefill
    /// scores and the layer-averaged action scores.
    pub fn step_scores(
        &mut self,
        prefill: &ScoreVector,
        action: ScoreVector,
        embeddings: &crate::diversity::Embeddings,
    ) -> Result<SelectionResult> {
        let result = select_frame(prefill, embeddings, &self.state, &self.prune)?;
        self.state.observe(action)?;
        Ok(result)
    }
}

/// Theoretical FLOPs ratio for a trace's token counts on the 7B preset,
/// with the budget taken as an exact retained-token count.
pub fn preset_flops_ratio(header: &TraceHeader, budget: usize, prune_layer: usize) -> Result<f64> {
    let mut dims: ModelDims = Preset::OpenVla7b.dims(header.n_text as u64, prune_layer as u64, 1.0);
    dims.visual_tokens = header.m_visual as u64;
    // Nudge the ratio up half a token so floor(rho * M) lands on `budget`.
    dims.retain_ratio = ((budget as f64 + 0.5) / header.m_visual as f64).min(1.0);
    dims.validate()?;
    Ok(dims.flops_ratio())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub m: usize,
    pub n_text: usize,
    pub frames: usize,
    pub ratio: f64,
    pub embed_dim: usize,
    pub layers: usize,
    pub seed: u64,
    pub prune: Option<PruneConfig>,
    pub estimator: EstimatorConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            m: 256,
            n_text: 44,
            frames: 300,
            ratio: 0.25,
            embed_dim: 64,
            layers: 4,
            seed: 0,
            prune: None,
            estimator: EstimatorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub m: usize,
    pub budget: usize,
    pub embed_dim: usize,
    pub frames: usize,
    pub timed_frames: usize,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p95_us: f64,
    pub max_us: f64,
}

/// Times the per-frame selection path (estimate, union, greedy filter,
/// estimator update) over a synthetic episode. Warm-up frames are excluded.
pub fn bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let header = TraceHeader::new("bench", cfg.m, cfg.n_text, cfg.layers, cfg.embed_dim, Payload::Scored);
    let frames = synthesize_trace(&SynthConfig { seed: cfg.seed, frames: cfg.frames, ..Default::default() }, &header)?;
    let budget = Budget::Ratio(cfg.ratio).resolve(cfg.m)?;
    let prune = cfg.prune.map(|p| PruneConfig { budget, ..p }).unwrap_or_else(|| PruneConfig::new(budget));
    let layout = header.layout()?;
    let scored: Vec<_> = frames.iter().map(|f| f.scores(&layout)).collect::<Result<_>>()?;

    let mut replayer = Replayer::new(layout, prune, cfg.estimator)?;
    let mut samples = Vec::with_capacity(frames.len());
    for (f, s) in frames.iter().zip(&scored) {
        let warm = replayer.state().is_warm();
        let action = s.action_scores()?;
        let start = Instant::now();
        replayer.step_scores(&s.prefill, action, &f.embeddings)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e6;
        if warm {
            samples.push(elapsed);
        }
    }
    samples.sort_by(f64::total_cmp);
    let pct = |q: f64| -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        samples[((samples.len() - 1) as f64 * q).round() as usize]
    };
    Ok(BenchReport {
        m: cfg.m,
        budget,
        embed_dim: cfg.embed_dim,
        frames: cfg.frames,
        timed_frames: samples.len(),
        mean_us: if samples.is_empty() { 0.0 } else { samples.iter().sum::<f64>() / samples.len() as f64 },
        p50_us: pct(0.5),
        p95_us: pct(0.95),
        max_us: samples.last().copied().unwrap_or(0.0),
    })
}
