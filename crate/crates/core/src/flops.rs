//! Closed-form transformer FLOPs accounting for full versus pruned prefill.
//!
//! Per layer, attention plus FFN at sequence length `n` costs
//! `4 n d^2 + 2 n^2 d + 2 n d m`. Layers before the prune layer see the full
//! `N + M` tokens, the remaining `T - K + 1` layers see `N + floor(rho M)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact per-layer cost. `u128` holds any realistic model size.
pub fn c_layer(n: u64, d: u64, m: u64) -> u128 {
    let (n, d, m) = (n as u128, d as u128, m as u128);
    4 * n * d * d + 2 * n * n * d + 2 * n * d * m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub layers: u64,
    pub prune_layer: u64,
    pub hidden: u64,
    pub ffn: u64,
    pub text_tokens: u64,
    pub visual_tokens: u64,
    pub retain_ratio: f64,
}

/// Prompt length assumed when none is given; chosen inside the 30 to 50
/// token range typical of short manipulation instructions.
pub const DEFAULT_TEXT_TOKENS: u64 = 44;

/// Named backbone shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Llama-2-7B backbone with 256 visual patches.
    OpenVla7b,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "openvla-7b" => Ok(Preset::OpenVla7b),
            other => Err(Error::invalid("preset", format!("unknown preset {other:?}"))),
        }
    }

    /// Dims for this preset; the text token count has no published value and
    /// must be supplied.
    pub fn dims(self, text_tokens: u64, prune_layer: u64, retain_ratio: f64) -> ModelDims {
        match self {
            Preset::OpenVla7b => ModelDims {
                layers: 32,
                prune_layer,
                hidden: 4096,
                ffn: 11008,
                text_tokens,
                visual_tokens: 256,
                retain_ratio,
            },
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.ffn == 0 || self.visual_tokens == 0 {
            return Err(Error::invalid("model dims", "layers, hidden, ffn and visual tokens must be positive"));
        }
        if self.prune_layer == 0 || self.prune_layer > self.layers {
            return Err(Error::out_of_range("prune layer", self.prune_layer, format!("1..={}", self.layers)));
        }
        if !(self.retain_ratio > 0.0 && self.retain_ratio <= 1.0) {
            return Err(Error::out_of_range("retain ratio", self.retain_ratio, "(0, 1]"));
        }
        Ok(())
    }

    pub fn full_len(&self) -> u64 {
        self.text_tokens + self.visual_tokens
    }

    /// `N + floor(rho * M)`.
    pub fn pruned_len(&self) -> u64 {
        self.text_tokens + (self.retain_ratio * self.visual_tokens as f64).floor() as u64
    }

    fn cost(&self, n: u64) -> u128 {
        c_layer(n, self.hidden, self.ffn)
    }

    pub fn flops_full(&self) -> u128 {
        self.layers as u128 * self.cost(self.full_len())
    }

    pub fn flops_pruned(&self) -> u128 {
        let before = (self.prune_layer - 1) as u128;
        let after = (self.layers - self.prune_layer + 1) as u128;
        before * self.cost(self.full_len()) + after * self.cost(self.pruned_len())
    }

    pub fn flops_ratio(&self) -> f64 {
        self.flops_pruned() as f64 / self.flops_full() as f64
    }
}

/// Rough operation count of the selection step itself: window smoothing,
/// pairwise distances over the candidate pool, and the greedy sweeps.
/// Not part of the model totals.
pub fn selection_overhead(visual_tokens: u64, budget: u64, window: u64, embed_dim: u64) -> u128 {
    let pool = (2 * budget).min(visual_tokens) as u128;
    let smoothing = window as u128 * visual_tokens as u128;
    let distances = pool * pool.saturating_sub(1) / 2 * embed_dim as u128;
    let greedy = pool * pool + budget as u128 * pool;
    smoothing + distances + greedy
}
