//! Top-K cosine retrieval over a concept bank.
//!
//! [`topk_exact`] is the reference: a single scan with a bounded heap.
//! [`IvfIndex`] partitions the bank with spherical k-means and scans only the
//! posting lists of the `n_probe` closest centroids.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vecstore::{self, cosine_slices, dot, EmbeddingMatrix, EmbeddingVector, VecError};

/// Default number of retrieved concepts.
pub const DEFAULT_K: usize = 2048;

/// Largest k served by the approximate index; larger requests fall back to
/// exact search.
pub const IVF_MAX_K: usize = 2048;

const KMEANS_MAX_ITER: usize = 25;
const KMEANS_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: bank has {expected}, query has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("concept bank is empty")]
    EmptyBank,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("n_list must be in 1..={max}, got {got}")]
    InvalidNList { got: usize, max: usize },
    #[error("n_probe must be in 1..={max}, got {got}")]
    InvalidNProbe { got: usize, max: usize },
    #[error("malformed index: {0}")]
    BadIndex(String),
    #[error(transparent)]
    Format(#[from] VecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Retrieved bank rows, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSet {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub k: usize,
}

impl RetrievalSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    score: f64,
    index: usize,
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Greater means worse: lower score, then higher index. The max-heap top is
// therefore the weakest kept candidate.
impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.index.cmp(&other.index))
    }
}

/// Keeps the `k` best `(index, score)` pairs without sorting the whole stream.
fn select_topk(candidates: impl Iterator<Item = (usize, f64)>, k: usize) -> RetrievalSet {
    let mut heap: BinaryHeap<Scored> = BinaryHeap::with_capacity(k + 1);
    for (index, score) in candidates {
        let cand = Scored { score, index };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            if cand < *worst {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    let sorted = heap.into_sorted_vec();
    RetrievalSet {
        indices: sorted.iter().map(|s| s.index).collect(),
        scores: sorted.iter().map(|s| s.score).collect(),
        k,
    }
}

fn check_query(query: &EmbeddingVector, rows: &EmbeddingMatrix, k: usize) -> Result<(), RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if rows.is_empty() {
        return Err(RetrievalError::EmptyBank);
    }
    if query.dim() != rows.dim() {
        return Err(RetrievalError::DimensionMismatch {
            expected: rows.dim(),
            actual: query.dim(),
        });
    }
    Ok(())
}

/// Similarity used for ranking: a dot product when both sides are unit-norm.
fn scorer<'a>(query: &'a EmbeddingVector, rows: &'a EmbeddingMatrix) -> impl Fn(usize) -> f64 + 'a {
    let fast = query.is_normalized() && rows.is_normalized();
    move |i| {
        if fast {
            dot(query.values(), rows.row(i))
        } else {
            cosine_slices(query.values(), rows.row(i))
        }
    }
}

/// Exact top-`k` rows of `rows` by cosine similarity to `query`, ties broken
/// by ascending row index.
pub fn topk_exact(query: &EmbeddingVector, rows: &EmbeddingMatrix, k: usize) -> Result<RetrievalSet, RetrievalError> {
    check_query(query, rows, k)?;
    let score = scorer(query, rows);
    Ok(select_topk((0..rows.count()).map(|i| (i, score(i))), k))
}

/// Runs [`topk_exact`] for every query in parallel.
pub fn topk_exact_batch(
    queries: &[EmbeddingVector],
    rows: &EmbeddingMatrix,
    k: usize,
) -> Result<Vec<RetrievalSet>, RetrievalError> {
    queries.par_iter().map(|q| topk_exact(q, rows, k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IvfManifest {
    n_list: usize,
    seed: u64,
    dim: usize,
    count: usize,
    n_probe: usize,
}

/// Inverted-file index over a fixed bank.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    centroids: EmbeddingMatrix,
    postings: Vec<Vec<u32>>,
    n_probe: usize,
    seed: u64,
}

fn argmax_centroid(row: &[f32], centroids: &EmbeddingMatrix) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (c, centroid) in centroids.rows().enumerate() {
        let s = dot(row, centroid);
        if s > best_score {
            best_score = s;
            best = c;
        }
    }
    best
}

fn assign(rows: &EmbeddingMatrix, centroids: &EmbeddingMatrix) -> Vec<usize> {
    (0..rows.count())
        .into_par_iter()
        .map(|i| argmax_centroid(rows.row(i), centroids))
        .collect()
}

/// k-means++ seeding on the unit sphere (squared distance `2 - 2cos`).
fn seed_centroids(rows: &EmbeddingMatrix, n_list: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = rows.count();
    let mut chosen = Vec::with_capacity(n_list);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut min_dist: Vec<f64> = (0..n)
        .map(|i| (2.0 - 2.0 * dot(rows.row(i), rows.row(first))).max(0.0))
        .collect();
    while chosen.len() < n_list {
        let total: f64 = (0..n).filter(|&i| !taken[i]).map(|i| min_dist[i]).sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for i in (0..n).filter(|&i| !taken[i]) {
                target -= min_dist[i];
                if target <= 0.0 && min_dist[i] > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| !taken[i] && min_dist[i] > 0.0).unwrap())
        } else {
            // only duplicates of existing centroids remain
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        taken[next] = true;
        for i in 0..n {
            let d = (2.0 - 2.0 * dot(rows.row(i), rows.row(next))).max(0.0);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
    }
    chosen
}

/// Spherical k-means over the (unit-norm) bank rows.
pub fn build_ivf(rows: &EmbeddingMatrix, n_list: usize, seed: u64) -> Result<IvfIndex, RetrievalError> {
    if rows.is_empty() {
        return Err(RetrievalError::EmptyBank);
    }
    if n_list == 0 || n_list > rows.count() {
        return Err(RetrievalError::InvalidNList {
            got: n_list,
            max: rows.count(),
        });
    }
    let rows_owned;
    let rows = if rows.is_normalized() {
        rows
    } else {
        rows_owned = rows.normalized()?;
        &rows_owned
    };
    let dim = rows.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = seed_centroids(rows, n_list, &mut rng);
    let mut centroids = rows.select_rows(&seeds);

    for iter in 0..KMEANS_MAX_ITER {
        let labels = assign(rows, &centroids);
        let mut sums = vec![0f64; n_list * dim];
        for (i, &c) in labels.iter().enumerate() {
            for (acc, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(rows.row(i)) {
                *acc += x as f64;
            }
        }
        let mut data = Vec::with_capacity(n_list * dim);
        let mut movement = 0f64;
        for c in 0..n_list {
            let sum = &sums[c * dim..(c + 1) * dim];
            let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
            let old = centroids.row(c);
            let new: Vec<f32> = if norm > vecstore::ZERO_NORM {
                sum.iter().map(|x| (x / norm) as f32).collect()
            } else {
                old.to_vec()
            };
            let shift = new
                .iter()
                .zip(old)
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            movement = movement.max(shift);
            data.extend(new);
        }
        centroids = EmbeddingMatrix::new(dim, data, true)?;
        log::debug!("ivf k-means iteration {iter}: max centroid shift {movement:.3e}");
        if movement < KMEANS_TOL {
            break;
        }
    }

    let labels = assign(rows, &centroids);
    let mut postings = vec![Vec::new(); n_list];
    for (i, &c) in labels.iter().enumerate() {
        postings[c].push(i as u32);
    }
    Ok(IvfIndex {
        centroids,
        postings,
        n_probe: (n_list / 8).max(1),
        seed,
    })
}

impl IvfIndex {
    pub fn n_list(&self) -> usize {
        self.postings.len()
    }

    pub fn n_probe(&self) -> usize {
        self.n_probe
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn centroids(&self) -> &EmbeddingMatrix {
        &self.centroids
    }

    pub fn postings(&self) -> &[Vec<u32>] {
        &self.postings
    }

    pub fn row_count(&self) -> usize {
        self.postings.iter().map(Vec::len).sum()
    }

    pub fn set_n_probe(&mut self, n_probe: usize) -> Result<(), RetrievalError> {
        if n_probe == 0 || n_probe > self.n_list() {
            return Err(RetrievalError::InvalidNProbe {
                got: n_probe,
                max: self.n_list(),
            });
        }
        self.n_probe = n_probe;
        Ok(())
    }

    pub fn with_n_probe(mut self, n_probe: usize) -> Result<Self, RetrievalError> {
        self.set_n_probe(n_probe)?;
        Ok(self)
    }

    /// Exact top-`k` restricted to the `n_probe` closest posting lists.
    pub fn search(&self, query: &EmbeddingVector, rows: &EmbeddingMatrix, k: usize) -> Result<RetrievalSet, RetrievalError> {
        check_query(query, rows, k)?;
        if self.row_count() != rows.count() {
            return Err(RetrievalError::BadIndex(format!(
                "index covers {} rows, bank has {}",
                self.row_count(),
                rows.count()
            )));
        }
        let probe = select_topk(
            self.centroids
                .rows()
                .enumerate()
                .map(|(c, centroid)| (c, cosine_slices(query.values(), centroid))),
            self.n_probe,
        );
        let score = scorer(query, rows);
        let mut candidates: Vec<usize> = probe
            .indices
            .iter()
            .flat_map(|&c| self.postings[c].iter().map(|&i| i as usize))
            .collect();
        candidates.sort_unstable();
        Ok(select_topk(candidates.into_iter().map(|i| (i, score(i))), k))
    }

    /// Writes `ivf.json`, `centroids.zcbm` and `postings.bin` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let manifest = IvfManifest {
            n_list: self.n_list(),
            seed: self.seed,
            dim: self.centroids.dim(),
            count: self.row_count(),
            n_probe: self.n_probe,
        };
        let f = File::create(dir.join("ivf.json"))?;
        serde_json::to_writer_pretty(f, &manifest).map_err(|e| RetrievalError::BadIndex(e.to_string()))?;
        vecstore::save_matrix(&self.centroids, dir.join("centroids.zcbm"))?;
        let mut w = BufWriter::new(File::create(dir.join("postings.bin"))?);
        for list in &self.postings {
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            for &i in list {
                w.write_all(&i.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let dir = dir.as_ref();
        let manifest: IvfManifest = serde_json::from_reader(BufReader::new(File::open(dir.join("ivf.json"))?))
            .map_err(|e| RetrievalError::BadIndex(e.to_string()))?;
        let centroids = vecstore::load_matrix(dir.join("centroids.zcbm"))?;
        if centroids.count() != manifest.n_list || centroids.dim() != manifest.dim {
            return Err(RetrievalError::BadIndex("centroid matrix disagrees with manifest".into()));
        }
        let mut bytes = Vec::new();
        BufReader::new(File::open(dir.join("postings.bin"))?).read_to_end(&mut bytes)?;
        let mut words = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()));
        if bytes.len() % 4 != 0 {
            return Err(RetrievalError::BadIndex("postings file not word aligned".into()));
        }
        let mut postings = Vec::with_capacity(manifest.n_list);
        for _ in 0..manifest.n_list {
            let len = words
                .next()
                .ok_or_else(|| RetrievalError::BadIndex("postings truncated".into()))? as usize;
            let list: Vec<u32> = words.by_ref().take(len).collect();
            if list.len() != len {
                return Err(RetrievalError::BadIndex("postings truncated".into()));
            }
            postings.push(list);
        }
        if words.next().is_some() {
            return Err(RetrievalError::BadIndex("trailing data in postings".into()));
        }
        let mut seen = vec![false; manifest.count];
        for &i in postings.iter().flatten() {
            match seen.get_mut(i as usize) {
                Some(s) if !*s => *s = true,
                _ => return Err(RetrievalError::BadIndex(format!("row {i} duplicated or out of range"))),
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(RetrievalError::BadIndex("posting lists do not cover every row".into()));
        }
        let mut index = IvfIndex {
            centroids,
            postings,
            n_probe: 1,
            seed: manifest.seed,
        };
        index.set_n_probe(manifest.n_probe)?;
        Ok(index)
    }
}

/// Search backend selected by configuration.
#[derive(Debug, Clone, Default)]
pub enum Retriever {
    #[default]
    Exact,
    Ivf(IvfIndex),
}

impl Retriever {
    pub fn search(&self, query: &EmbeddingVector, rows: &EmbeddingMatrix, k: usize) -> Result<RetrievalSet, RetrievalError> {
        match self {
            Retriever::Exact => topk_exact(query, rows, k),
            Retriever::Ivf(index) if k > IVF_MAX_K => {
                log::warn!("k = {k} exceeds the approximate index limit {IVF_MAX_K}; using exact search");
                let _ = index;
                topk_exact(query, rows, k)
            }
            Retriever::Ivf(index) => index.search(query, rows, k),
        }
    }
}

/// Fraction of `exact` indices also present in `approx`.
pub fn recall(approx: &RetrievalSet, exact: &RetrievalSet) -> f64 {
    if exact.is_empty() {
        return 1.0;
    }
    let hits = exact.indices.iter().filter(|i| approx.indices.contains(i)).count();
    hits as f64 / exact.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecstore::normalize;

    fn basis(n: usize) -> EmbeddingMatrix {
        let mut data = vec![0f32; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        EmbeddingMatrix::new(n, data, true).unwrap()
    }

    fn random_bank(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        EmbeddingMatrix::from_rows_normalized(d, &rows).unwrap()
    }

    fn naive(query: &EmbeddingVector, rows: &EmbeddingMatrix, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = (0..rows.count())
            .map(|i| (i, vecstore::cosine(query, &rows.row_vector(i)).unwrap()))
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn exact_match_wins() {
        let bank = basis(3);
        let q = normalize(&[0.0, 1.0, 0.0]).unwrap();
        let r = topk_exact(&q, &bank, 1).unwrap();
        assert_eq!(r.indices, vec![1]);
        assert_eq!(r.scores, vec![1.0]);
    }

    #[test]
    fn k_beyond_bank_returns_all_sorted() {
        let bank = basis(3);
        let q = normalize(&[0.2, 0.9, 0.4]).unwrap();
        let r = topk_exact(&q, &bank, 10).unwrap();
        assert_eq!(r.indices, vec![1, 2, 0]);
        assert_eq!(r.len(), 3);
    }

    #[test]
    fn matches_naive_sort_on_random_bank() {
        let bank = random_bank(100, 16, 7);
        let q = normalize(bank.row(3)).unwrap();
        let r = topk_exact(&q, &bank, 10).unwrap();
        let oracle = naive(&q, &bank, 10);
        assert_eq!(r.indices, oracle.iter().map(|x| x.0).collect::<Vec<_>>());
    }

    #[test]
    fn ties_break_by_index() {
        let row = [0.6f32, 0.8];
        let data: Vec<f32> = row.iter().chain(&[1.0, 0.0]).chain(&row).chain(&row).copied().collect();
        let bank = EmbeddingMatrix::new(2, data, true).unwrap();
        let q = normalize(&row).unwrap();
        let r = topk_exact(&q, &bank, 3).unwrap();
        assert_eq!(r.indices, vec![0, 2, 3]);
    }

    #[test]
    fn errors() {
        let bank = basis(3);
        let q = normalize(&[1.0, 0.0]).unwrap();
        assert!(matches!(topk_exact(&q, &bank, 1), Err(RetrievalError::DimensionMismatch { .. })));
        let q = normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(topk_exact(&q, &bank, 0), Err(RetrievalError::InvalidK)));
        assert!(matches!(
            topk_exact(&q, &EmbeddingMatrix::empty(3), 1),
            Err(RetrievalError::EmptyBank)
        ));
        assert!(matches!(build_ivf(&bank, 4, 0), Err(RetrievalError::InvalidNList { .. })));
    }

    #[test]
    fn ivf_single_list_holds_everything() {
        let bank = random_bank(50, 8, 1);
        let index = build_ivf(&bank, 1, 3).unwrap();
        assert_eq!(index.postings().len(), 1);
        assert_eq!(index.postings()[0], (0..50u32).collect::<Vec<_>>());
    }

    #[test]
    fn ivf_one_list_per_row() {
        let bank = random_bank(40, 8, 2);
        let index = build_ivf(&bank, 40, 3).unwrap();
        assert!(index.postings().iter().all(|p| p.len() <= 1));
        assert_eq!(index.row_count(), 40);
    }

    #[test]
    fn ivf_separates_antipodal_clusters() {
        // two clusters around +e1 and -e1, every cross pair at negative cosine
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0f32, 0.05).unwrap();
        let mut rows = Vec::new();
        for i in 0..60 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let mut v: Vec<f32> = (0..8).map(|_| noise.sample(&mut rng)).collect();
            v[0] += sign;
            rows.push(v);
        }
        let bank = EmbeddingMatrix::from_rows_normalized(8, &rows).unwrap();
        for i in 0..60 {
            for j in 0..60 {
                if i % 2 != j % 2 {
                    assert!(dot(bank.row(i), bank.row(j)) < 0.0);
                }
            }
        }
        let index = build_ivf(&bank, 2, 5).unwrap();
        for list in index.postings() {
            let parity: Vec<u32> = list.iter().map(|i| i % 2).collect();
            assert_eq!(list.len(), 30);
            assert!(parity.iter().all(|&p| p == parity[0]));
        }
    }

    #[test]
    fn ivf_full_probe_equals_exact() {
        let bank = random_bank(500, 16, 4);
        let index = build_ivf(&bank, 12, 9).unwrap().with_n_probe(12).unwrap();
        for qi in [0, 17, 250] {
            let q = normalize(bank.row(qi)).unwrap();
            for k in [1, 7, 64, 500] {
                assert_eq!(index.search(&q, &bank, k).unwrap(), topk_exact(&q, &bank, k).unwrap());
            }
        }
    }

    #[test]
    fn ivf_query_at_centroid_returns_best_of_its_list() {
        let bank = random_bank(300, 8, 6);
        let index = build_ivf(&bank, 6, 1).unwrap().with_n_probe(1).unwrap();
        let q = index.centroids().row_vector(2);
        let r = index.search(&q, &bank, 1).unwrap();
        let best = index.postings()[2]
            .iter()
            .map(|&i| i as usize)
            .max_by(|&a, &b| dot(q.values(), bank.row(a)).total_cmp(&dot(q.values(), bank.row(b))).then(b.cmp(&a)))
            .unwrap();
        assert_eq!(r.indices, vec![best]);
    }

    #[test]
    fn ivf_persistence_round_trip() {
        let bank = random_bank(120, 8, 8);
        let index = build_ivf(&bank, 5, 42).unwrap().with_n_probe(2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        index.save(dir.path()).unwrap();
        let back = IvfIndex::load(dir.path()).unwrap();
        assert_eq!(back, index);
    }

    #[test]
    fn build_is_deterministic() {
        let bank = random_bank(200, 8, 3);
        assert_eq!(build_ivf(&bank, 8, 5).unwrap(), build_ivf(&bank, 8, 5).unwrap());
    }

    #[test]
    fn retriever_falls_back_above_limit() {
        let bank = random_bank(3000, 4, 12);
        let index = build_ivf(&bank, 4, 1).unwrap();
        let q = normalize(bank.row(0)).unwrap();
        let r = Retriever::Ivf(index).search(&q, &bank, 2500).unwrap();
        assert_eq!(r, topk_exact(&q, &bank, 2500).unwrap());
    }
}
