//! Exhaustive Max-Min Diversity solver for small candidate pools.
//!
//! Serves as ground truth for the greedy filter. Enumeration is exponential,
//! so pools are capped at [`MAX_POOL`].

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::diversity::{cosine_distance, Embeddings};
use crate::error::{Error, Result};

pub const MAX_POOL: usize = 20;

/// Value reported for a single-element subset, where the minimum over pairs
/// is vacuous: the largest possible cosine distance.
pub const VACUOUS_OPTIMUM: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub subset: Vec<usize>,
    pub optimum: f64,
}

/// Pairwise distance with zero-norm rows treated as fully redundant.
fn distance(emb: &Embeddings, i: usize, j: usize) -> f64 {
    cosine_distance(emb.row(i), emb.row(j)).unwrap_or(0.0)
}

/// Minimum pairwise distance of `subset`, or [`VACUOUS_OPTIMUM`] when it has
/// fewer than two members.
pub fn subset_min_distance(emb: &Embeddings, subset: &[usize]) -> f64 {
    let mut best = VACUOUS_OPTIMUM;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            best = best.min(distance(emb, i, j));
        }
    }
    best
}

/// Best `target`-subset of `pool` under the max-min objective. Among equal
/// optima the lexicographically smallest index subset wins.
pub fn solve_exact(emb: &Embeddings, pool: &[usize], target: usize) -> Result<OracleSolution> {
    let mut pool = pool.to_vec();
    pool.sort_unstable();
    pool.dedup();
    if pool.len() > MAX_POOL {
        return Err(Error::PoolTooLarge { size: pool.len(), limit: MAX_POOL });
    }
    if pool.is_empty() {
        return Err(Error::Empty("candidate pool"));
    }
    if target == 0 || target > pool.len() {
        return Err(Error::out_of_range("target", target, format!("1..={}", pool.len())));
    }
    if let Some(&bad) = pool.iter().find(|&&i| i >= emb.m()) {
        return Err(Error::out_of_range("token index", bad, format!("0..{}", emb.m())));
    }

    let n = pool.len();
    let mut table = vec![0.0; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let d = distance(emb, pool[a], pool[b]);
            table[a * n + b] = d;
            table[b * n + a] = d;
        }
    }

    // Combinations arrive in lexicographic order, so a strict improvement
    // test keeps the smallest subset among ties.
    let mut best: Option<(Vec<usize>, f64)> = None;
    for combo in (0..n).combinations(target) {
        let mut value = VACUOUS_OPTIMUM;
        'pairs: for (x, &a) in combo.iter().enumerate() {
            for &b in &combo[x + 1..] {
                value = value.min(table[a * n + b]);
                if let Some((_, bv)) = &best {
                    if value <= *bv {
                        break 'pairs;
                    }
                }
            }
        }
        if best.as_ref().is_none_or(|(_, bv)| value > *bv) {
            best = Some((combo, value));
        }
    }

    let (combo, optimum) = best.expect("at least one combination");
    Ok(OracleSolution { subset: combo.into_iter().map(|k| pool[k]).collect(), optimum })
}
