//! Aggregation of post-softmax attention into per-patch importance scores.
//!
//! Two score levels are produced from the same column-mean reduction:
//!
//! * semantic level: the last-layer prefill attention over the full
//!   vision-language sequence, averaged over every query row;
//! * action level: the action-token query rows attending back into the
//!   vision-language context, averaged over those rows.
//!
//! Matrices are expected to be head-averaged already. Causal prefill
//! attention is reduced as-is, without renormalizing for the mask.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl AttentionMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(
                "attention matrix values",
                format!("{rows}x{cols} = {}", rows * cols),
                values.len(),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(
                "attention matrix",
                format!("entries must be finite and non-negative, found {bad}"),
            ));
        }
        Ok(AttentionMatrix { rows, cols, values })
    }

    /// Builds a matrix by stacking rows of equal width.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).ok_or(Error::Empty("attention rows"))?;
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::shape("attention row", cols, format!("{} (row {i})", row.len())));
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// True when every row sums to one within `tol`.
    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        (0..self.rows).all(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs() <= tol)
    }

    /// Mean over query rows of every column.
    pub fn column_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        sums.iter_mut().for_each(|s| *s *= inv);
        sums
    }
}

/// Per-visual-patch importance scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("score vector"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid("score vector", format!("scores must be finite and non-negative, found {bad}")));
        }
        Ok(ScoreVector(values))
    }

    pub fn zeros(m: usize) -> Self {
        ScoreVector(vec![0.0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Multiplies every score by a non-negative factor.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for ScoreVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ScoreVector::new(values)
    }
}

impl From<ScoreVector> for Vec<f64> {
    fn from(s: ScoreVector) -> Self {
        s.0
    }
}

/// Position of the visual tokens inside the vision-language sequence.
///
/// `n_text` counts every non-visual context token, proprioception included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub n_text: usize,
    pub m_visual: usize,
    pub visual_offset: usize,
}

impl TokenLayout {
    pub fn new(n_text: usize, m_visual: usize, visual_offset: usize) -> Result<Self> {
        if m_visual == 0 {
            return Err(Error::Empty("visual token set"));
        }
        if visual_offset + m_visual > n_text + m_visual {
            return Err(Error::out_of_range("visual_offset", visual_offset, format!("0..={n_text}")));
        }
        Ok(TokenLayout { n_text, m_visual, visual_offset })
    }

    /// Full vision-language sequence length `N + M`.
    pub fn context_len(&self) -> usize {
        self.n_text + self.m_visual
    }

    pub fn visual_columns(&self) -> Range<usize> {
        self.visual_offset..self.visual_offset + self.m_visual
    }
}

fn visual_column_means(a: &AttentionMatrix, layout: &TokenLayout) -> ScoreVector {
    let cols = layout.visual_columns();
    let mut sums = vec![0.0; layout.m_visual];
    for i in 0..a.rows() {
        for (s, v) in sums.iter_mut().zip(&a.row(i)[cols.clone()]) {
            *s += v;
        }
    }
    let inv = 1.0 / a.rows() as f64;
    ScoreVector(sums.into_iter().map(|s| s * inv).collect())
}

/// Semantic-level scores: mean attention each visual patch receives over all
/// `N + M` prefill query rows.
pub fn prefill_scores(a: &AttentionMatrix, layout: &TokenLayout) -> Result<ScoreVector> {
    let mu = layout.context_len();
    if a.rows() != mu || a.cols() != mu {
        return Err(Error::shape("prefill attention", format!("{mu}x{mu}"), format!("{}x{}", a.rows(), a.cols())));
    }
    Ok(visual_column_means(a, layout))
}

/// Action-level scores: mean attention each visual patch receives from the
/// action query rows.
///
/// Autoregressive callers stack the per-step rows first; flow-matching heads
/// pass rows already averaged over integration steps.
pub fn decode_scores(a: &AttentionMatrix, layout: &TokenLayout) -> Result<ScoreVector> {
    if a.rows() == 0 {
        return Err(Error::Empty("decode attention rows"));
    }
    let mu = layout.context_len();
    if a.cols() != mu {
        return Err(Error::shape("decode attention columns", mu, a.cols()));
    }
    Ok(visual_column_means(a, layout))
}

/// Elementwise mean of `per_layer[layer_range]`.
pub fn average_layer_scores(per_layer: &[ScoreVector], layer_range: Range<usize>) -> Result<ScoreVector> {
    if per_layer.is_empty() {
        return Err(Error::Empty("per-layer score list"));
    }
    if layer_range.is_empty() {
        return Err(Error::Empty("layer range"));
    }
    if layer_range.end > per_layer.len() {
        return Err(Error::out_of_range("layer range end", layer_range.end, format!("0..={}", per_layer.len())));
    }
    let m = per_layer[0].len();
    if let Some(bad) = per_layer.iter().find(|s| s.len() != m) {
        return Err(Error::shape("per-layer score vector", m, bad.len()));
    }
    let count = layer_range.len() as f64;
    let mut acc = vec![0.0; m];
    for layer in &per_layer[layer_range] {
        for (a, v) in acc.iter_mut().zip(layer.as_slice()) {
            *a += v;
        }
    }
    Ok(ScoreVector(acc.into_iter().map(|v| v / count).collect()))
}

/// Latter half of `layers` recorded layers (`layers / 2 .. layers`).
pub fn latter_half(layers: usize) -> Range<usize> {
    layers / 2..layers
}
