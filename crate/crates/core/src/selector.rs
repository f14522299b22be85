//! Dual-level token selection (combine-then-filter) and its ablation variants.
//!
//! Indices are zero-based throughout. Ties in every ranking go to the lower
//! index, so selections are fully deterministic.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diversity::{min_pairwise_distance, min_redundancy_filter, Embeddings};
use crate::error::{Error, Result};
use crate::estimator::EstimatorState;
use crate::scoring::ScoreVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Union of both Top-k sets, then greedy max-min filtering.
    #[default]
    Dual,
    PrefillOnly,
    ActionOnly,
    /// Top-k of a weighted sum of min-max normalized scores.
    ScoreFusion,
    /// Max-min filtering over all patches, ignoring attention.
    DiversityOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Dual, Variant::PrefillOnly, Variant::ActionOnly, Variant::ScoreFusion, Variant::DiversityOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dual => "dual",
            Variant::PrefillOnly => "prefill-only",
            Variant::ActionOnly => "action-only",
            Variant::ScoreFusion => "score-fusion",
            Variant::DiversityOnly => "diversity-only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid("variant", format!("unknown variant {s:?}")))
    }
}

/// What to do before the estimator has `w` frames of history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WarmupPolicy {
    #[default]
    RetainAll,
    PrefillOnly,
}

/// Token budget, either absolute or as a retention ratio of `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Ratio(f64),
    Count(usize),
}

impl Budget {
    /// `floor(ratio * m)` clamped to at least one, or the explicit count.
    pub fn resolve(self, m: usize) -> Result<usize> {
        match self {
            Budget::Ratio(r) => {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(Error::out_of_range("ratio", r, "(0, 1]"));
                }
                Ok(((r * m as f64).floor() as usize).max(1))
            }
            Budget::Count(0) => Err(Error::out_of_range("budget", 0, ">= 1")),
            Budget::Count(c) if c > m => Err(Error::out_of_range("budget", c, format!("1..={m}"))),
            Budget::Count(c) => Ok(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Retained token count `M~`.
    pub budget: usize,
    /// Transformer layer before which tokens are dropped.
    pub prune_layer: usize,
    pub variant: Variant,
    /// Weight on the semantic scores for [`Variant::ScoreFusion`].
    pub fusion_weight: f64,
    pub warmup: WarmupPolicy,
}

impl PruneConfig {
    pub const DEFAULT_PRUNE_LAYER: usize = 3;

    pub fn new(budget: usize) -> Self {
        PruneConfig {
            budget,
            prune_layer: Self::DEFAULT_PRUNE_LAYER,
            variant: Variant::Dual,
            fusion_weight: 0.5,
            warmup: WarmupPolicy::RetainAll,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_warmup(mut self, warmup: WarmupPolicy) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn with_fusion_weight(mut self, w: f64) -> Self {
        self.fusion_weight = w;
        self
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.budget == 0 || self.budget > m {
            return Err(Error::out_of_range("budget", self.budget, format!("1..={m}")));
        }
        if self.prune_layer == 0 {
            return Err(Error::out_of_range("prune_layer", 0, ">= 1"));
        }
        if !(0.0..=1.0).contains(&self.fusion_weight) {
            return Err(Error::out_of_range("fusion_weight", self.fusion_weight, "[0, 1]"));
        }
        Ok(())
    }
}

/// Retained indices plus the intermediate sets that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub retained: Vec<usize>,
    /// Size of the candidate set the final selection was drawn from.
    pub pool_size: usize,
    pub c_vl: Vec<usize>,
    pub c_act: Vec<usize>,
    pub min_pairwise_distance: f64,
    pub warmup_applied: bool,
}

/// Indices of the `k` largest scores, returned in ascending index order.
pub fn top_k_indices(scores: &ScoreVector, k: usize) -> Result<Vec<usize>> {
    let m = scores.len();
    if k == 0 || k > m {
        return Err(Error::out_of_range("k", k, format!("1..={m}")));
    }
    let s = scores.as_slice();
    let mut order: Vec<usize> = (0..m).collect();
    let by_rank = |a: &usize, b: &usize| -> Ordering { s[*b].total_cmp(&s[*a]).then(a.cmp(b)) };
    if k < m {
        order.select_nth_unstable_by(k - 1, by_rank);
    }
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

/// Rescales to `[0, 1]`; a constant vector maps to all zeros.
pub fn min_max_normalize(scores: &ScoreVector) -> Vec<f64> {
    let s = scores.as_slice();
    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span <= 0.0 {
        return vec![0.0; s.len()];
    }
    s.iter().map(|v| (v - lo) / span).collect()
}

fn union_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn check_dims(s_vl: &ScoreVector, s_act: &ScoreVector, emb: &Embeddings, cfg: &PruneConfig) -> Result<usize> {
    let m = s_vl.len();
    if s_act.len() != m {
        return Err(Error::shape("action scores", m, s_act.len()));
    }
    if emb.m() != m {
        return Err(Error::shape("embedding rows", m, emb.m()));
    }
    cfg.validate(m)?;
    Ok(m)
}

fn finish(
    emb: &Embeddings,
    retained: Vec<usize>,
    pool_size: usize,
    c_vl: Vec<usize>,
    c_act: Vec<usize>,
) -> Result<SelectionResult> {
    let min_pairwise_distance = min_pairwise_distance(emb, &retained)?;
    Ok(SelectionResult { retained, pool_size, c_vl, c_act, min_pairwise_distance, warmup_applied: false })
}

fn keep_everything(emb: &Embeddings, m: usize) -> Result<SelectionResult> {
    let all: Vec<usize> = (0..m).collect();
    finish(emb, all.clone(), m, all.clone(), all)
}

/// Combine-then-filter: `C_vl ∪ C_act`, reduced to the budget by greedy
/// max-min filtering.
pub fn select_dual(
    s_vl: &ScoreVector,
    s_act_hat: &ScoreVector,
    emb: &Embeddings,
    cfg: &PruneConfig,
) -> Result<SelectionResult> {
    let m = check_dims(s_vl, s_act_hat, emb, cfg)?;
    if cfg.budget >= m {
        return keep_everything(emb, m);
    }
    let c_vl = top_k_indices(s_vl, cfg.budget)?;
    let c_act = top_k_indices(s_act_hat, cfg.budget)?;
    let pool = union_sorted(&c_vl, &c_act);
    let retained = min_redundancy_filter(emb, &pool, cfg.budget)?;
    finish(emb, retained, pool.len(), c_vl, c_act)
}

/// Dispatches on `cfg.variant`.
pub fn select_variant(
    s_vl: &ScoreVector,
    s_act_hat: &ScoreVector,
    emb: &Embeddings,
    cfg: &PruneConfig,
) -> Result<SelectionResult> {
    if cfg.variant == Variant::Dual {
        return select_dual(s_vl, s_act_hat, emb, cfg);
    }
    let m = check_dims(s_vl, s_act_hat, emb, cfg)?;
    if cfg.budget >= m {
        return keep_everything(emb, m);
    }
    let k = cfg.budget;
    let c_vl = top_k_indices(s_vl, k)?;
    let c_act = top_k_indices(s_act_hat, k)?;
    let (retained, pool_size) = match cfg.variant {
        Variant::PrefillOnly => (c_vl.clone(), k),
        Variant::ActionOnly => (c_act.clone(), k),
        Variant::ScoreFusion => {
            let lambda = cfg.fusion_weight;
            let fused: Vec<f64> = min_max_normalize(s_vl)
                .into_iter()
                .zip(min_max_normalize(s_act_hat))
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect();
            (top_k_indices(&ScoreVector::new(fused)?, k)?, k)
        }
        Variant::DiversityOnly => {
            let all: Vec<usize> = (0..m).collect();
            (min_redundancy_filter(emb, &all, k)?, m)
        }
        Variant::Dual => unreachable!(),
    };
    finish(emb, retained, pool_size, c_vl, c_act)
}

/// Per-frame entry point: applies the warm-start policy, otherwise forecasts
/// the action scores from `state` and runs the configured selector.
///
/// `state` must hold only frames strictly before the current one.
pub fn select_frame(
    s_vl: &ScoreVector,
    emb: &Embeddings,
    state: &EstimatorState,
    cfg: &PruneConfig,
) -> Result<SelectionResult> {
    let m = s_vl.len();
    if emb.m() != m {
        return Err(Error::shape("embedding rows", m, emb.m()));
    }
    if let Some(hist_m) = state.m() {
        if hist_m != m {
            return Err(Error::shape("estimator history", m, hist_m));
        }
    }
    cfg.validate(m)?;

    if !state.is_warm() {
        let mut result = match cfg.warmup {
            WarmupPolicy::RetainAll => {
                let all: Vec<usize> = (0..m).collect();
                finish(emb, all, m, Vec::new(), Vec::new())?
            }
            WarmupPolicy::PrefillOnly => {
                let c_vl = top_k_indices(s_vl, cfg.budget)?;
                finish(emb, c_vl.clone(), cfg.budget, c_vl, Vec::new())?
            }
        };
        result.warmup_applied = true;
        return Ok(result);
    }

    let s_act_hat = state.estimate()?;
    select_variant(s_vl, &s_act_hat, emb, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{EstimatorConfig, EstimatorMode};
    use itertools::Itertools;

    fn sv(v: &[f64]) -> ScoreVector {
        ScoreVector::new(v.to_vec()).unwrap()
    }

    fn unit(deg: f64) -> Vec<f32> {
        let r = deg.to_radians();
        vec![r.cos() as f32, r.sin() as f32]
    }

    fn spread_embeddings(m: usize) -> Embeddings {
        Embeddings::from_rows(&(0..m).map(|i| unit(i as f64 * 360.0 / m as f64)).collect::<Vec<_>>()).unwrap()
    }

    // Exhaustive sort oracle for Top-k.
    fn top_k_oracle(s: &[f64], k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|a, b| s[*b].partial_cmp(&s[*a]).unwrap().then(a.cmp(b)));
        let mut out = idx[..k].to_vec();
        out.sort();
        out
    }

    #[test]
    fn top_k_examples() {
        let s = sv(&[0.1, 0.9, 0.5, 0.5]);
        assert_eq!(top_k_indices(&s, 2).unwrap(), vec![1, 2]);
        assert_eq!(top_k_indices(&s, 2).unwrap(), top_k_oracle(s.as_slice(), 2));
        assert_eq!(top_k_indices(&s, 4).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(top_k_indices(&sv(&[0.3; 5]), 2).unwrap(), vec![0, 1]);
        assert!(top_k_indices(&s, 0).is_err());
        assert!(top_k_indices(&s, 5).is_err());
    }

    #[test]
    fn top_k_matches_sort_oracle_with_ties() {
        for values in [0u32, 1, 2].iter().cartesian_product(0..3).cartesian_product(0..3).cartesian_product(0..3) {
            let (((a, b), c), d) = values;
            let s = vec![*a as f64, b as f64, c as f64, d as f64];
            for k in 1..=4 {
                assert_eq!(top_k_indices(&sv(&s), k).unwrap(), top_k_oracle(&s, k));
            }
        }
    }

    #[test]
    fn coincident_levels_reduce_to_top_k() {
        let s = sv(&[0.5, 0.1, 0.9, 0.3, 0.7, 0.2]);
        let cfg = PruneConfig::new(3);
        let r = select_dual(&s, &s, &spread_embeddings(6), &cfg).unwrap();
        assert_eq!(r.retained, top_k_indices(&s, 3).unwrap());
        assert_eq!(r.pool_size, 3);
    }

    #[test]
    fn divergent_levels_pick_farthest_pair() {
        // Pool {0,1,4,5}; rows 0 and 4 are antipodal, 1 and 5 sit close to 0.
        let emb =
            Embeddings::from_rows(&[unit(0.0), unit(20.0), unit(90.0), unit(100.0), unit(180.0), unit(30.0)]).unwrap();
        let s_vl = sv(&[0.9, 0.8, 0.1, 0.1, 0.0, 0.0]);
        let s_act = sv(&[0.0, 0.0, 0.1, 0.1, 0.8, 0.9]);
        let r = select_dual(&s_vl, &s_act, &emb, &PruneConfig::new(2)).unwrap();
        assert_eq!(r.c_vl, vec![0, 1]);
        assert_eq!(r.c_act, vec![4, 5]);
        assert_eq!(r.pool_size, 4);
        assert_eq!(r.retained, vec![0, 4]);

        // brute-force over all 2-subsets of the pool
        let best = [0usize, 1, 4, 5]
            .into_iter()
            .combinations(2)
            .max_by(|a, b| {
                let da = min_pairwise_distance(&emb, a).unwrap();
                let db = min_pairwise_distance(&emb, b).unwrap();
                da.partial_cmp(&db).unwrap().then(b.cmp(a))
            })
            .unwrap();
        assert_eq!(best, vec![0, 4]);
    }

    #[test]
    fn full_budget_keeps_everything() {
        let s = sv(&[0.1, 0.2, 0.3]);
        for v in Variant::ALL {
            let r = select_variant(&s, &s, &spread_embeddings(3), &PruneConfig::new(3).with_variant(v)).unwrap();
            assert_eq!(r.retained, vec![0, 1, 2]);
            assert_eq!(r.pool_size, 3);
        }
    }

    #[test]
    fn variant_examples() {
        let emb = spread_embeddings(4);
        let s_vl = sv(&[3.0, 2.0, 1.0, 0.0]);
        let s_act = sv(&[0.0, 1.0, 2.0, 3.0]);
        let prefill = PruneConfig::new(2).with_variant(Variant::PrefillOnly);
        assert_eq!(select_variant(&s_vl, &s_act, &emb, &prefill).unwrap().retained, vec![0, 1]);
        let action = PruneConfig::new(2).with_variant(Variant::ActionOnly);
        assert_eq!(select_variant(&s_vl, &s_act, &emb, &action).unwrap().retained, vec![2, 3]);

        let fusion1 = PruneConfig::new(2).with_variant(Variant::ScoreFusion).with_fusion_weight(1.0);
        assert_eq!(
            select_variant(&s_vl, &s_act, &emb, &fusion1).unwrap().retained,
            select_variant(&s_vl, &s_act, &emb, &prefill).unwrap().retained,
        );

        let emb2 = spread_embeddings(2);
        let half = PruneConfig::new(1).with_variant(Variant::ScoreFusion).with_fusion_weight(0.5);
        let r = select_variant(&sv(&[1.0, 0.0]), &sv(&[0.0, 1.0]), &emb2, &half).unwrap();
        assert_eq!(r.retained, vec![0]);
    }

    #[test]
    fn constant_scores_normalize_to_zero() {
        assert_eq!(min_max_normalize(&sv(&[0.4; 3])), vec![0.0; 3]);
        assert_eq!(min_max_normalize(&sv(&[1.0, 3.0, 2.0])), vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn diversity_only_ignores_scores() {
        let emb = Embeddings::from_rows(&[unit(0.0), unit(10.0), unit(90.0), unit(180.0)]).unwrap();
        let cfg = PruneConfig::new(2).with_variant(Variant::DiversityOnly);
        let r = select_variant(&sv(&[0.0, 1.0, 1.0, 0.0]), &sv(&[0.0, 1.0, 1.0, 0.0]), &emb, &cfg).unwrap();
        assert_eq!(r.retained, vec![0, 3]);
        assert_eq!(r.pool_size, 4);
        assert_eq!(r.min_pairwise_distance, 2.0);
    }

    #[test]
    fn dimension_mismatch() {
        let cfg = PruneConfig::new(1);
        assert!(select_dual(&sv(&[1.0, 0.0]), &sv(&[1.0]), &spread_embeddings(2), &cfg).is_err());
        assert!(select_dual(&sv(&[1.0, 0.0]), &sv(&[1.0, 0.0]), &spread_embeddings(3), &cfg).is_err());
        assert!(select_dual(&sv(&[1.0, 0.0]), &sv(&[1.0, 0.0]), &spread_embeddings(2), &PruneConfig::new(3)).is_err());
    }

    #[test]
    fn budget_resolution() {
        assert_eq!(Budget::Ratio(0.5).resolve(256).unwrap(), 128);
        assert_eq!(Budget::Ratio(0.125).resolve(256).unwrap(), 32);
        assert_eq!(Budget::Ratio(0.3).resolve(10).unwrap(), 3);
        assert_eq!(Budget::Ratio(0.01).resolve(10).unwrap(), 1);
        assert!(Budget::Ratio(0.0).resolve(10).is_err());
        assert!(Budget::Ratio(1.5).resolve(10).is_err());
        assert!(Budget::Count(11).resolve(10).is_err());
        assert!(Budget::Count(0).resolve(10).is_err());
    }

    fn window_state(w: usize) -> EstimatorState {
        EstimatorState::new(EstimatorConfig { mode: EstimatorMode::Window, window: w, ..Default::default() }).unwrap()
    }

    #[test]
    fn warmup_retain_all() {
        let state = window_state(3);
        let r = select_frame(&sv(&[0.4, 0.3, 0.2, 0.1]), &spread_embeddings(4), &state, &PruneConfig::new(2)).unwrap();
        assert_eq!(r.retained, vec![0, 1, 2, 3]);
        assert!(r.warmup_applied);
    }

    #[test]
    fn warmup_prefill_fallback() {
        let mut state = window_state(3);
        state.observe(sv(&[0.0, 0.0, 1.0, 1.0])).unwrap();
        let cfg = PruneConfig::new(2).with_warmup(WarmupPolicy::PrefillOnly);
        let r = select_frame(&sv(&[0.4, 0.3, 0.2, 0.1]), &spread_embeddings(4), &state, &cfg).unwrap();
        assert_eq!(r.retained, vec![0, 1]);
        assert!(r.warmup_applied);
    }

    #[test]
    fn warm_frame_composes_estimate_and_dual() {
        let mut state = window_state(3);
        for obs in [[0.1, 0.0, 0.6, 0.3], [0.0, 0.2, 0.5, 0.3], [0.1, 0.1, 0.1, 0.7]] {
            state.observe(sv(&obs)).unwrap();
        }
        let s_vl = sv(&[0.4, 0.3, 0.2, 0.1]);
        let emb = spread_embeddings(4);
        let cfg = PruneConfig::new(2);
        let got = select_frame(&s_vl, &emb, &state, &cfg).unwrap();
        let want = select_dual(&s_vl, &state.window_estimate().unwrap(), &emb, &cfg).unwrap();
        assert_eq!(got, want);
        assert!(!got.warmup_applied);
    }
}
