//! Deterministic synthetic episodes.
//!
//! Randomness comes from ChaCha8 seeded with `seed` (`rand_chacha`), so a
//! given config regenerates the same trace on every platform. Draw order:
//!
//! 1. embeddings: `max(1, M/8)` cluster centres, then one noisy row per
//!    patch, patches assigned to clusters in contiguous runs;
//! 2. text-column logits and a fixed semantic logit profile over patches;
//! 3. a fixed background logit per patch and the first focus patch;
//! 4. per frame: the random-walk step (or a focus jump on shift frames),
//!    then the prefill matrix rows, then each layer's decode rows.
//!
//! Action logits are `background + bump(focus) + walk`, where the bump is a
//! Gaussian on the square patch grid. Every attention row is a softmax over
//! the full `N + M` context plus per-row noise of scale `noise_sigma`, and is
//! rounded to `f32` so the trace round-trips exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DecodeMode, Frame, FramePayload, Payload, TraceHeader};
use crate::diversity::Embeddings;
use crate::error::{Error, Result};
use crate::scoring::{self, AttentionMatrix, ScoreVector, TokenLayout};

const CLUSTER_SIZE: usize = 8;
const CLUSTER_SPREAD: f64 = 0.5;
const SEMANTIC_SCALE: f64 = 1.5;
const BACKGROUND_SCALE: f64 = 0.5;
const FOCUS_HEIGHT: f64 = 4.0;
const FOCUS_WIDTH: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub frames: usize,
    /// Per-frame random-walk step on the action logits.
    pub drift_sigma: f64,
    /// Jump the action focus to a fresh patch every this many frames.
    pub shift_every: Option<usize>,
    /// Per-row attention logit noise.
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { seed: 0, frames: 300, drift_sigma: 0.1, shift_every: None, noise_sigma: 0.3 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::out_of_range("frames", 0, ">= 1"));
        }
        if !(self.drift_sigma >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("synth config", "sigmas must be non-negative"));
        }
        if self.shift_every == Some(0) {
            return Err(Error::out_of_range("shift_every", 0, ">= 1"));
        }
        Ok(())
    }
}

/// Rows per layer of decode attention for each decode mode.
pub fn decode_rows(mode: DecodeMode) -> usize {
    match mode {
        DecodeMode::Autoregressive => 7,
        DecodeMode::Chunk => 8,
        DecodeMode::FlowAveraged => 1,
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

struct Generator {
    rng: ChaCha8Rng,
    layout: TokenLayout,
    grid: usize,
    text_logits: Vec<f64>,
    semantic: Vec<f64>,
    background: Vec<f64>,
    focus: usize,
    walk: Vec<f64>,
}

impl Generator {
    fn bump(&self, patch: usize) -> f64 {
        let (r0, c0) = (self.focus / self.grid, self.focus % self.grid);
        let (r1, c1) = (patch / self.grid, patch % self.grid);
        let dr = r0 as f64 - r1 as f64;
        let dc = c0 as f64 - c1 as f64;
        FOCUS_HEIGHT * (-(dr * dr + dc * dc) / (2.0 * FOCUS_WIDTH * FOCUS_WIDTH)).exp()
    }

    /// Row logits over the whole context, visual block from `visual`.
    fn context_logits(&self, visual: &[f64]) -> Vec<f64> {
        let mu = self.layout.context_len();
        let mut out = Vec::with_capacity(mu);
        let off = self.layout.visual_offset;
        out.extend_from_slice(&self.text_logits[..off]);
        out.extend_from_slice(visual);
        out.extend_from_slice(&self.text_logits[off..]);
        out
    }

    fn noisy_softmax_row(&mut self, logits: &[f64], noise: f64, out: &mut Vec<f64>) {
        let noisy: Vec<f64> = logits.iter().map(|l| l + noise * normal(&mut self.rng)).collect();
        let max = noisy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = noisy.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| (e / sum) as f32 as f64));
    }
}

fn quantize(s: ScoreVector) -> Result<ScoreVector> {
    ScoreVector::new(s.into_inner().into_iter().map(|v| v as f32 as f64).collect())
}

/// Generates `cfg.frames` frames shaped by `header`.
pub fn synthesize_trace(cfg: &SynthConfig, header: &TraceHeader) -> Result<Vec<Frame>> {
    cfg.validate()?;
    let layout = header.layout()?;
    let m = header.m_visual;
    let n = header.n_text;
    let dim = header.embed_dim;
    if header.layers == 0 || dim == 0 {
        return Err(Error::invalid("trace header", "layers and embed_dim must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let clusters = (m / CLUSTER_SIZE).max(1);
    let centres: Vec<f64> = (0..clusters * dim).map(|_| normal(&mut rng)).collect();
    let mut emb = Vec::with_capacity(m * dim);
    for i in 0..m {
        let c = i * clusters / m;
        for k in 0..dim {
            emb.push((centres[c * dim + k] + CLUSTER_SPREAD * normal(&mut rng)) as f32);
        }
    }
    let embeddings = Embeddings::new(m, dim, emb)?;

    let text_logits: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let semantic: Vec<f64> = (0..m).map(|_| SEMANTIC_SCALE * normal(&mut rng)).collect();
    let background: Vec<f64> = (0..m).map(|_| BACKGROUND_SCALE * normal(&mut rng)).collect();
    let focus = rng.random_range(0..m);

    let mut g = Generator {
        rng,
        layout,
        grid: (m as f64).sqrt().ceil() as usize,
        text_logits,
        semantic,
        background,
        focus,
        walk: vec![0.0; m],
    };

    let mu = layout.context_len();
    let rows_per_layer = decode_rows(header.decode_mode);
    let mut frames = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        if t > 0 {
            if cfg.shift_every.is_some_and(|p| t % p == 0) {
                g.focus = g.rng.random_range(0..m);
                g.walk.iter_mut().for_each(|w| *w = 0.0);
            } else {
                for w in g.walk.iter_mut() {
                    *w += cfg.drift_sigma * normal(&mut g.rng);
                }
            }
        }

        let prefill_logits = g.context_logits(&g.semantic.clone());
        let mut values = Vec::with_capacity(mu * mu);
        for _ in 0..mu {
            g.noisy_softmax_row(&prefill_logits, cfg.noise_sigma, &mut values);
        }
        let prefill = AttentionMatrix::new(mu, mu, values)?;

        let action: Vec<f64> = (0..m).map(|i| g.background[i] + g.bump(i) + g.walk[i]).collect();
        let decode_logits = g.context_logits(&action);
        let mut decode = Vec::with_capacity(header.layers);
        for _ in 0..header.layers {
            let mut values = Vec::with_capacity(rows_per_layer * mu);
            for _ in 0..rows_per_layer {
                g.noisy_softmax_row(&decode_logits, cfg.noise_sigma, &mut values);
            }
            decode.push(AttentionMatrix::new(rows_per_layer, mu, values)?);
        }

        let payload = match header.payload {
            Payload::Raw => FramePayload::Raw { prefill, decode },
            Payload::Scored => FramePayload::Scored {
                prefill: quantize(scoring::prefill_scores(&prefill, &layout)?)?,
                decode: decode
                    .iter()
                    .map(|a| scoring::decode_scores(a, &layout).and_then(quantize))
                    .collect::<Result<Vec<_>>>()?,
            },
        };
        frames.push(Frame { timestep: t as u64, payload, embeddings: embeddings.clone() });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(payload: Payload) -> TraceHeader {
        TraceHeader::new("synthetic", 16, 3, 2, 4, payload)
    }

    #[test]
    fn deterministic_for_a_seed() {
        let cfg = SynthConfig { seed: 11, frames: 5, ..Default::default() };
        let a = synthesize_trace(&cfg, &header(Payload::Scored)).unwrap();
        let b = synthesize_trace(&cfg, &header(Payload::Scored)).unwrap();
        assert_eq!(a, b);
        let c = synthesize_trace(&SynthConfig { seed: 12, ..cfg }, &header(Payload::Scored)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rows_are_stochastic() {
        let cfg = SynthConfig { seed: 1, frames: 3, ..Default::default() };
        for f in synthesize_trace(&cfg, &header(Payload::Raw)).unwrap() {
            let FramePayload::Raw { prefill, decode } = &f.payload else { panic!() };
            assert!(prefill.is_row_stochastic(1e-5));
            for d in decode {
                assert_eq!(d.rows(), 7);
                assert!(d.is_row_stochastic(1e-5));
            }
        }
    }

    #[test]
    fn frozen_dynamics_repeat_exactly() {
        let cfg = SynthConfig { seed: 4, frames: 6, drift_sigma: 0.0, noise_sigma: 0.0, shift_every: None };
        let frames = synthesize_trace(&cfg, &header(Payload::Scored)).unwrap();
        for f in &frames[1..] {
            assert_eq!(f.payload, frames[0].payload);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let h = header(Payload::Scored);
        assert!(synthesize_trace(&SynthConfig { frames: 0, ..Default::default() }, &h).is_err());
        assert!(synthesize_trace(&SynthConfig { drift_sigma: -1.0, ..Default::default() }, &h).is_err());
        assert!(synthesize_trace(&SynthConfig { shift_every: Some(0), ..Default::default() }, &h).is_err());
    }
}
