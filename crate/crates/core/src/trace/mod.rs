//! Episode traces: the `.vlat` file format and a synthetic trace generator.
//!
//! A trace is line-delimited JSON. The first line is the header; every
//! following line is one frame. Numeric arrays are stored as little-endian
//! `f32` payloads in base-64 strings, so values round-trip bit-exactly at
//! 32-bit precision while the structural fields stay human-readable.
//!
//! ```text
//! {"format":"vlat","version":1,"episode_id":"ep0","m_visual":256,...}
//! {"t":0,"prefill":{"rows":1,"cols":256,"data":"..."},"decode":[...],"embeddings":{...}}
//! ```

mod format;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::diversity::Embeddings;
use crate::error::Result;
use crate::scoring::{self, AttentionMatrix, ScoreVector, TokenLayout};

pub use format::{
    buffer_size, checksum, checksum_bytes, checksum_reader, read_trace, write_trace, TraceError, TraceErrorKind,
    TraceReader, TraceWriter, BUFFER_ENV,
};
pub use synth::{synthesize_trace, SynthConfig};

pub const FORMAT_TAG: &str = "vlat";
pub const FORMAT_VERSION: u32 = 1;
pub const FILE_EXTENSION: &str = "vlat";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Payload {
    /// Full attention matrices.
    Raw,
    /// Precomputed score vectors.
    Scored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    /// One row per generated action token, stacked.
    #[default]
    Autoregressive,
    /// One row per token of an action chunk.
    Chunk,
    /// Rows already averaged over flow-matching steps.
    FlowAveraged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub episode_id: String,
    pub m_visual: usize,
    pub n_text: usize,
    /// First key column holding a visual token.
    pub visual_offset: usize,
    /// Number of decoder layers with recorded action attention.
    pub layers: usize,
    pub embed_dim: usize,
    pub payload: Payload,
    pub decode_mode: DecodeMode,
}

impl TraceHeader {
    pub fn new(
        episode_id: impl Into<String>,
        m_visual: usize,
        n_text: usize,
        layers: usize,
        embed_dim: usize,
        payload: Payload,
    ) -> Self {
        TraceHeader {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            episode_id: episode_id.into(),
            m_visual,
            n_text,
            visual_offset: n_text.min(1),
            layers,
            embed_dim,
            payload,
            decode_mode: DecodeMode::Autoregressive,
        }
    }

    pub fn layout(&self) -> Result<TokenLayout> {
        TokenLayout::new(self.n_text, self.m_visual, self.visual_offset)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FramePayload {
    Raw {
        /// Last-layer prefill attention, `(N+M) x (N+M)`.
        prefill: AttentionMatrix,
        /// Per-layer action-query rows against the `N+M` context.
        decode: Vec<AttentionMatrix>,
    },
    Scored {
        prefill: ScoreVector,
        decode: Vec<ScoreVector>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestep: u64,
    pub payload: FramePayload,
    /// Visual hidden states at the input of the prune layer.
    pub embeddings: Embeddings,
}

/// A frame reduced to scores.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScores {
    pub timestep: u64,
    pub prefill: ScoreVector,
    pub decode_layers: Vec<ScoreVector>,
}

impl FrameScores {
    /// Action scores averaged over the latter half of the recorded layers,
    /// the signal fed to the estimator.
    pub fn action_scores(&self) -> Result<ScoreVector> {
        scoring::average_layer_scores(&self.decode_layers, scoring::latter_half(self.decode_layers.len()))
    }

    /// Action scores averaged over every recorded layer.
    pub fn action_scores_all_layers(&self) -> Result<ScoreVector> {
        scoring::average_layer_scores(&self.decode_layers, 0..self.decode_layers.len())
    }
}

impl Frame {
    pub fn scores(&self, layout: &TokenLayout) -> Result<FrameScores> {
        let (prefill, decode_layers) = match &self.payload {
            FramePayload::Raw { prefill, decode } => (
                scoring::prefill_scores(prefill, layout)?,
                decode.iter().map(|a| scoring::decode_scores(a, layout)).collect::<Result<Vec<_>>>()?,
            ),
            FramePayload::Scored { prefill, decode } => (prefill.clone(), decode.clone()),
        };
        Ok(FrameScores { timestep: self.timestep, prefill, decode_layers })
    }
}
