//! Cosine-distance redundancy filtering over visual token embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One embedding row per visual patch, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embeddings {
    m: usize,
    dim: usize,
    values: Vec<f32>,
}

impl Embeddings {
    pub fn new(m: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::out_of_range("embedding dim", 0, ">= 1"));
        }
        if values.len() != m * dim {
            return Err(Error::shape("embedding values", format!("{m}x{dim} = {}", m * dim), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embeddings", "entries must be finite"));
        }
        Ok(Embeddings { m, dim, values })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::Empty("embedding rows"))?;
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::shape("embedding row", dim, bad.len()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(a, b)| *a as f64 * *b as f64).sum()
}

/// `1 - u.v / (|u| |v|)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine distance operand", u.len(), v.len()));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((1.0 - dot(u, v) / (nu * nv)).clamp(0.0, 2.0))
}

/// Pairwise cosine distances over a subset of embedding rows.
///
/// Rows with zero norm sit at distance 0 from everything.
struct DistanceTable {
    n: usize,
    d: Vec<f64>,
}

impl DistanceTable {
    fn build(emb: &Embeddings, indices: &[usize]) -> Self {
        let n = indices.len();
        let dim = emb.dim();
        let mut units = vec![0.0f64; n * dim];
        let mut degenerate = vec![false; n];
        for (k, &i) in indices.iter().enumerate() {
            let row = emb.row(i);
            let norm = dot(row, row).sqrt();
            if norm == 0.0 {
                degenerate[k] = true;
                continue;
            }
            for (u, v) in units[k * dim..(k + 1) * dim].iter_mut().zip(row) {
                *u = *v as f64 / norm;
            }
        }
        let zero_rows = degenerate.iter().filter(|z| **z).count();
        if zero_rows > 0 {
            log::warn!("{zero_rows} zero-norm embedding row(s); treating them as fully redundant");
        }

        let mut d = vec![0.0; n * n];
        for a in 0..n {
            let ua = &units[a * dim..(a + 1) * dim];
            for b in a + 1..n {
                let dist = if degenerate[a] || degenerate[b] {
                    0.0
                } else {
                    let ub = &units[b * dim..(b + 1) * dim];
                    let sim: f64 = ua.iter().zip(ub).map(|(x, y)| x * y).sum();
                    (1.0 - sim).clamp(0.0, 2.0)
                };
                d[a * n + b] = dist;
                d[b * n + a] = dist;
            }
        }
        DistanceTable { n, d }
    }

    #[inline]
    fn get(&self, a: usize, b: usize) -> f64 {
        self.d[a * self.n + b]
    }
}

fn check_indices(emb: &Embeddings, indices: &[usize]) -> Result<()> {
    match indices.iter().find(|&&i| i >= emb.m()) {
        Some(&bad) => Err(Error::out_of_range("token index", bad, format!("0..{}", emb.m()))),
        None => Ok(()),
    }
}

/// Smallest pairwise cosine distance within `indices`; 0 for fewer than two.
pub fn min_pairwise_distance(emb: &Embeddings, indices: &[usize]) -> Result<f64> {
    check_indices(emb, indices)?;
    if indices.len() < 2 {
        return Ok(0.0);
    }
    let table = DistanceTable::build(emb, indices);
    let mut best = f64::INFINITY;
    for a in 0..indices.len() {
        for b in a + 1..indices.len() {
            best = best.min(table.get(a, b));
        }
    }
    Ok(best)
}

/// Greedy max-min reduction of `pool` to `target` tokens.
///
/// The seed is the pool member whose second-nearest neighbour is farthest
/// away; afterwards each step adds the member whose distance to the
/// selected set is largest. Ties go to the lower index. Returns sorted
/// indices; a pool no larger than `target` comes back unchanged.
pub fn min_redundancy_filter(emb: &Embeddings, pool: &[usize], target: usize) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::Empty("candidate pool"));
    }
    if target == 0 {
        return Err(Error::out_of_range("target", 0, ">= 1"));
    }
    check_indices(emb, pool)?;
    let mut pool = pool.to_vec();
    pool.sort_unstable();
    pool.dedup();
    if pool.len() <= target {
        return Ok(pool);
    }

    let n = pool.len();
    let table = DistanceTable::build(emb, &pool);

    // With only one other member the nearest distance stands in for the
    // second-nearest.
    let mut seed = 0;
    let mut seed_score = f64::NEG_INFINITY;
    for a in 0..n {
        let (mut first, mut second) = (f64::INFINITY, f64::INFINITY);
        for b in (0..n).filter(|&b| b != a) {
            let d = table.get(a, b);
            if d < first {
                second = first;
                first = d;
            } else if d < second {
                second = d;
            }
        }
        let score = if n > 2 { second } else { first };
        if score > seed_score {
            seed_score = score;
            seed = a;
        }
    }

    let mut selected = vec![false; n];
    selected[seed] = true;
    let mut nearest: Vec<f64> = (0..n).map(|b| table.get(seed, b)).collect();
    let mut chosen = vec![seed];
    while chosen.len() < target {
        let mut pick = usize::MAX;
        let mut pick_dist = f64::NEG_INFINITY;
        for b in 0..n {
            if !selected[b] && nearest[b] > pick_dist {
                pick = b;
                pick_dist = nearest[b];
            }
        }
        selected[pick] = true;
        chosen.push(pick);
        for (b, near) in nearest.iter_mut().enumerate() {
            *near = near.min(table.get(pick, b));
        }
    }

    let mut out: Vec<usize> = chosen.into_iter().map(|k| pool[k]).collect();
    out.sort_unstable();
    Ok(out)
}
