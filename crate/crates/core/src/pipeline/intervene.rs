use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_dim, Candidate, ConceptSource, Engine, PipelineError, Prediction};
use crate::bank::case_fold;
use crate::regress::{least_squares, RegressionProblem};
use crate::vecstore::{normalize, EmbeddingVector};

/// Which nonzero concepts are removed first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "order", content = "seed")]
pub enum DeletionOrder {
    /// Smallest |w| first.
    Ascending,
    /// Largest |w| first.
    Descending,
    Random(u64),
}

impl DeletionOrder {
    pub fn name(&self) -> &'static str {
        match self {
            DeletionOrder::Ascending => "ascending",
            DeletionOrder::Descending => "descending",
            DeletionOrder::Random(_) => "random",
        }
    }
}

/// `floor(ratio * n)`, robust to products like `0.29 * 100`.
pub(crate) fn deletion_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 + 1e-9).floor() as usize).min(n)
}

impl Engine {
    /// Zeroes the first `floor(ratio * n)` of the `n` nonzero weights in the
    /// given order; the remaining weights are kept as they are.
    pub fn intervene_delete(&self, p: &Prediction, order: DeletionOrder, ratio: f64) -> Result<Prediction, PipelineError> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(PipelineError::InvalidParameter(format!("deletion ratio {ratio} outside [0, 1]")));
        }
        let mut positions = p.ranked_positions();
        match order {
            DeletionOrder::Descending => {}
            DeletionOrder::Ascending => positions.reverse(),
            DeletionOrder::Random(seed) => positions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
        }
        let m = deletion_count(ratio, positions.len());
        self.with_deleted(p, &positions[..m])
    }

    /// Same candidates and weights as `p`, with the given positions zeroed.
    pub(crate) fn with_deleted(&self, p: &Prediction, positions: &[usize]) -> Result<Prediction, PipelineError> {
        let mut weights = p.weights.clone();
        let mut w = weights.w.clone();
        for &j in positions {
            w[j] = 0.0;
        }
        weights.set_weights(w);
        self.assemble(p.input.clone(), p.candidates.clone(), weights, p.retrieval.clone())
    }

    /// Re-fits least squares on the nonzero concepts of `p` plus the inserted
    /// ones, scaled to unit norm. Inserted strings already present are ignored.
    pub fn intervene_insert(&self, p: &Prediction, gt: &[(String, EmbeddingVector)]) -> Result<Prediction, PipelineError> {
        let mut candidates: Vec<Candidate> = p
            .candidates
            .iter()
            .zip(&p.weights.w)
            .filter(|(_, w)| **w != 0.0)
            .map(|(c, _)| c.clone())
            .collect();
        for (text, emb) in gt {
            check_dim(self.dim(), emb.dim())?;
            let key = case_fold(text);
            if candidates.iter().any(|c| case_fold(&c.text) == key) {
                continue;
            }
            candidates.push(Candidate {
                text: text.clone(),
                bank_index: self.bank.find(text),
                source: ConceptSource::Inserted,
                embedding: Some(if emb.is_normalized() { emb.values().to_vec() } else { normalize(emb.values())?.into_values() }),
            });
        }
        self.refit(p, candidates)
    }

    /// Least-squares fit of `p.input` on `candidates`.
    pub(crate) fn refit(&self, p: &Prediction, candidates: Vec<Candidate>) -> Result<Prediction, PipelineError> {
        let weights = if candidates.is_empty() {
            least_squares(&RegressionProblem::from_columns(self.dim(), Vec::new(), p.input.values().iter().map(|&v| v as f64).collect())?)
        } else {
            least_squares(&RegressionProblem::new(&self.design(&candidates)?, &p.input)?)
        };
        self.assemble(p.input.clone(), candidates, weights, p.retrieval.clone())
    }
}
