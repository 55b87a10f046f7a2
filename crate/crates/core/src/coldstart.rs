//! Cold-start exemplar selection: k-means over embeddings, then the sample
//! nearest each centroid.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ColdStartError {
    #[error("K = {k} must lie in 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("vector {id} has dimension {got}, expected {expected}")]
    Dimension { id: String, got: usize, expected: usize },
    #[error("vector {0} has a non-finite entry")]
    NonFinite(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
}

/// One line of the embeddings JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedCorpus {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddedCorpus {
    pub fn new(ids: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self, ColdStartError> {
        assert_eq!(ids.len(), vectors.len(), "one id per vector");
        let Some(first) = vectors.first() else {
            return Err(ColdStartError::EmptyCorpus);
        };
        let d = first.len();
        let mut seen = HashSet::new();
        for (id, v) in ids.iter().zip(&vectors) {
            if v.len() != d || d == 0 {
                return Err(ColdStartError::Dimension {
                    id: id.clone(),
                    got: v.len(),
                    expected: d,
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ColdStartError::NonFinite(id.clone()));
            }
            if !seen.insert(id.as_str()) {
                return Err(ColdStartError::DuplicateId(id.clone()));
            }
        }
        Ok(EmbeddedCorpus { ids, vectors })
    }

    pub fn from_rows(rows: Vec<EmbeddingRow>) -> Result<Self, ColdStartError> {
        let (ids, vectors) = rows.into_iter().map(|r| (r.id, r.vector)).unzip();
        Self::new(ids, vectors)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Rescales every nonzero vector to unit L2 norm.
    pub fn unit_normalized(&self) -> Self {
        let vectors = self
            .vectors
            .iter()
            .map(|v| {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    v.iter().map(|x| x / n).collect()
                } else {
                    v.clone()
                }
            })
            .collect();
        EmbeddedCorpus {
            ids: self.ids.clone(),
            vectors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterResult {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per corpus position.
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment pass; the last entry equals `inertia`.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

/// `min(ceil(n / 4), 64)`, at least 1.
pub fn default_k(n: usize) -> usize {
    n.div_ceil(4).clamp(1, 64)
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp_init(vectors: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![vectors[first].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| squared_distance(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if u < w {
                        break;
                    }
                    u -= w;
                }
            }
            pick.unwrap()
        } else {
            // Every remaining point coincides with a centroid.
            (0..n).find(|&i| !chosen[i]).unwrap()
        };
        chosen[pick] = true;
        centroids.push(vectors[pick].clone());
        for (i, v) in vectors.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(v, &vectors[pick]));
        }
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeding. Stops at an assignment fixpoint
/// or after `max_iters` centroid updates. Deterministic for a given seed.
pub fn kmeans(corpus: &EmbeddedCorpus, k: usize, max_iters: usize, seed: u64) -> Result<ClusterResult, ColdStartError> {
    let n = corpus.len();
    if k < 1 || k > n {
        return Err(ColdStartError::InvalidK { k, n });
    }
    let vectors = corpus.vectors();
    let d = corpus.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(vectors, k, &mut rng);
    let mut history = Vec::new();
    let mut prev: Option<Vec<usize>> = None;
    let mut iterations = 0;

    loop {
        let nearest_all: Vec<(usize, f64)> = vectors.par_iter().map(|v| nearest(v, &centroids)).collect();
        let assignments: Vec<usize> = nearest_all.iter().map(|a| a.0).collect();
        let inertia: f64 = nearest_all.iter().map(|a| a.1).sum();
        history.push(inertia);
        if prev.as_ref() == Some(&assignments) || iterations == max_iters {
            return Ok(ClusterResult {
                centroids,
                assignments,
                inertia,
                inertia_history: history,
                iterations,
            });
        }

        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (v, &a) in vectors.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(v) {
                *s += x;
            }
        }
        let mut reseeded = HashSet::new();
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Farthest point from its own centroid, ties to the lowest index.
                let mut far = None;
                let mut far_d = -1.0;
                for (i, v) in vectors.iter().enumerate() {
                    if reseeded.contains(&i) {
                        continue;
                    }
                    let dist = squared_distance(v, &centroids[assignments[i]]);
                    if dist > far_d {
                        far_d = dist;
                        far = Some(i);
                    }
                }
                if let Some(i) = far {
                    reseeded.insert(i);
                    centroids[j] = vectors[i].clone();
                }
            }
        }
        prev = Some(assignments);
        iterations += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub cluster: usize,
    pub id: String,
    pub distance: f64,
}

/// One exemplar per cluster: the member nearest its centroid (ties to the
/// smallest id). A cluster with no unselected member takes the nearest point
/// not already chosen, so ids are always distinct.
pub fn select_exemplars(corpus: &EmbeddedCorpus, clusters: &ClusterResult) -> Vec<Exemplar> {
    let ids = corpus.ids();
    let vectors = corpus.vectors();
    let mut taken = vec![false; corpus.len()];
    let mut out = Vec::with_capacity(clusters.centroids.len());
    let better = |cand: (f64, usize), best: Option<(f64, usize)>| match best {
        None => true,
        Some((bd, bi)) => cand.0 < bd || (cand.0 == bd && ids[cand.1] < ids[bi]),
    };
    for (j, c) in clusters.centroids.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..vectors.len() {
            if clusters.assignments[i] == j && !taken[i] {
                let cand = (squared_distance(&vectors[i], c), i);
                if better(cand, best) {
                    best = Some(cand);
                }
            }
        }
        if best.is_none() {
            for i in 0..vectors.len() {
                if !taken[i] {
                    let cand = (squared_distance(&vectors[i], c), i);
                    if better(cand, best) {
                        best = Some(cand);
                    }
                }
            }
        }
        if let Some((d2, i)) = best {
            taken[i] = true;
            out.push(Exemplar {
                cluster: j,
                id: ids[i].clone(),
                distance: d2.sqrt(),
            });
        }
    }
    out
}
