//! Retrieve, regress, predict.
//!
//! Inputs are normalized on arrival. The reconstruction `F W` is scored
//! against the class embeddings as is; cosine ignores its scale.

mod calibrate;
mod classes;
mod intervene;
mod session;

pub use calibrate::{select_lambda, Calibration, CalibrationPoint, DEFAULT_LAMBDA_GRID, DEFAULT_TARGET_RATIO};
pub use classes::{read_class_file, ClassLabel, ClassSet};
pub use intervene::DeletionOrder;
pub use session::{
    EditOp, HistoryEntry, InterventionSession, SessionConcept, SessionStore, DEFAULT_SESSION_TTL,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{BankError, ConceptBank};
use crate::regress::{ConceptWeights, RegressError, RegressionProblem, SolverConfig};
use crate::retrieval::{RetrievalError, RetrievalSet, Retriever};
use crate::vecstore::{dot, normalize, EmbeddingMatrix, EmbeddingVector, ProviderError, VecError};

/// Reconstructions with a smaller norm fall back to zero-shot scoring.
pub const DEGENERATE_NORM: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("class set is empty")]
    EmptyClassSet,
    #[error("no samples given")]
    EmptySamples,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid class file {path}: {message}")]
    ClassFile { path: String, message: String },
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} has expired")]
    ExpiredSession(String),
    #[error("no concept at position {0}")]
    UnknownConcept(usize),
    #[error(transparent)]
    Vector(#[from] VecError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptSource {
    Retrieved,
    Inserted,
}

/// A column of the regression design. Inserted concepts carry their own
/// embedding; retrieved ones point into the bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub bank_index: Option<usize>,
    pub source: ConceptSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptScore {
    pub text: String,
    pub bank_index: Option<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label_id: u32,
    pub class_scores: Vec<f64>,
    /// Nonzero weights, largest magnitude first.
    pub concepts: Vec<ConceptScore>,
    pub reconstructed: EmbeddingVector,
    pub weights: ConceptWeights,
    pub retrieval: RetrievalSet,
    pub candidates: Vec<Candidate>,
    /// Set when the reconstruction vanished and the label came from `x`.
    pub fallback: bool,
    pub input: EmbeddingVector,
}

impl Prediction {
    /// Largest-|w| first; equal magnitudes keep candidate order.
    pub fn ranked_positions(&self) -> Vec<usize> {
        let w = &self.weights.w;
        let mut pos: Vec<usize> = (0..w.len()).filter(|&j| w[j] != 0.0).collect();
        pos.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
        pos
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShot {
    pub label_id: u32,
    pub class_scores: Vec<f64>,
}

/// Argmax with ties going to the lowest label id.
fn argmax_label(classes: &ClassSet, scores: &[f64]) -> u32 {
    let mut best = 0;
    for i in 1..scores.len() {
        let (a, b) = (scores[i], scores[best]);
        if a > b || (a == b && classes.labels()[i].label_id < classes.labels()[best].label_id) {
            best = i;
        }
    }
    classes.labels()[best].label_id
}

/// Cosine of `x` against every class, then the argmax.
pub fn zero_shot_baseline(x: &EmbeddingVector, classes: &ClassSet) -> Result<ZeroShot, PipelineError> {
    if classes.is_empty() {
        return Err(PipelineError::EmptyClassSet);
    }
    check_dim(classes.dim(), x.dim())?;
    let norm = x.norm();
    let class_scores: Vec<f64> = classes
        .embeddings()
        .rows()
        .map(|row| if norm > 0.0 { dot(x.values(), row) / norm } else { 0.0 })
        .collect();
    Ok(ZeroShot {
        label_id: argmax_label(classes, &class_scores),
        class_scores,
    })
}

fn check_dim(expected: usize, actual: usize) -> Result<(), PipelineError> {
    if expected != actual {
        return Err(PipelineError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// A concept bank, a class set and a search backend.
#[derive(Debug, Clone)]
pub struct Engine {
    bank: ConceptBank,
    classes: ClassSet,
    retriever: Retriever,
}

impl Engine {
    pub fn new(bank: ConceptBank, classes: ClassSet, retriever: Retriever) -> Result<Self, PipelineError> {
        if classes.is_empty() {
            return Err(PipelineError::EmptyClassSet);
        }
        check_dim(bank.dim(), classes.dim())?;
        Ok(Self {
            bank,
            classes,
            retriever,
        })
    }

    pub fn bank(&self) -> &ConceptBank {
        &self.bank
    }

    pub fn classes(&self) -> &ClassSet {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.bank.dim()
    }

    pub fn retriever(&self) -> &Retriever {
        &self.retriever
    }

    /// Normalizes a raw input embedding after checking its dimension.
    pub fn prepare_input(&self, x: &EmbeddingVector) -> Result<EmbeddingVector, PipelineError> {
        check_dim(self.dim(), x.dim())?;
        Ok(if x.is_normalized() { x.clone() } else { normalize(x.values())? })
    }

    pub fn retrieve(&self, x: &EmbeddingVector, k: usize) -> Result<RetrievalSet, PipelineError> {
        let x = self.prepare_input(x)?;
        Ok(self.retriever.search(&x, self.bank.embeddings(), k)?)
    }

    pub fn infer(&self, x: &EmbeddingVector, k: usize, solver: &SolverConfig) -> Result<Prediction, PipelineError> {
        let x = self.prepare_input(x)?;
        let retrieval = self.retriever.search(&x, self.bank.embeddings(), k)?;
        let design = self.bank.embeddings().select_rows(&retrieval.indices);
        let weights = solver.solve(&RegressionProblem::new(&design, &x)?)?;
        let candidates = retrieval
            .indices
            .iter()
            .map(|&i| Candidate {
                text: self.bank.concept(i).to_string(),
                bank_index: Some(i),
                source: ConceptSource::Retrieved,
                embedding: None,
            })
            .collect();
        self.assemble(x, candidates, weights, retrieval)
    }

    /// Runs [`Engine::infer`] over every row, in parallel.
    pub fn infer_batch(
        &self,
        xs: &EmbeddingMatrix,
        k: usize,
        solver: &SolverConfig,
    ) -> Result<Vec<Prediction>, PipelineError> {
        (0..xs.count())
            .into_par_iter()
            .map(|i| self.infer(&EmbeddingVector::new(xs.row(i).to_vec())?, k, solver))
            .collect()
    }

    pub fn zero_shot(&self, x: &EmbeddingVector) -> Result<ZeroShot, PipelineError> {
        zero_shot_baseline(x, &self.classes)
    }

    fn candidate_embedding<'a>(&'a self, c: &'a Candidate) -> &'a [f32] {
        match (&c.embedding, c.bank_index) {
            (Some(e), _) => e,
            (None, Some(i)) => self.bank.embeddings().row(i),
            (None, None) => unreachable!("candidate without an embedding"),
        }
    }

    /// Design matrix with one row per candidate.
    pub(crate) fn design(&self, candidates: &[Candidate]) -> Result<EmbeddingMatrix, PipelineError> {
        let mut data = Vec::with_capacity(candidates.len() * self.dim());
        for c in candidates {
            data.extend_from_slice(self.candidate_embedding(c));
        }
        Ok(EmbeddingMatrix::new(self.dim(), data, false)?)
    }

    /// Builds the reconstruction and label for fixed weights.
    pub(crate) fn assemble(
        &self,
        input: EmbeddingVector,
        candidates: Vec<Candidate>,
        weights: ConceptWeights,
        retrieval: RetrievalSet,
    ) -> Result<Prediction, PipelineError> {
        let d = self.dim();
        let mut acc = vec![0f64; d];
        for (c, &w) in candidates.iter().zip(&weights.w) {
            if w != 0.0 {
                for (a, &v) in acc.iter_mut().zip(self.candidate_embedding(c)) {
                    *a += w * v as f64;
                }
            }
        }
        let reconstructed = EmbeddingVector::from_raw(acc.iter().map(|&v| v as f32).collect());
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (scores, fallback) = if norm < DEGENERATE_NORM {
            (self.zero_shot(&input)?, true)
        } else {
            (self.zero_shot(&reconstructed)?, false)
        };
        let mut prediction = Prediction {
            label_id: scores.label_id,
            class_scores: scores.class_scores,
            concepts: Vec::new(),
            reconstructed,
            weights,
            retrieval,
            candidates,
            fallback,
            input,
        };
        prediction.concepts = prediction
            .ranked_positions()
            .into_iter()
            .map(|j| ConceptScore {
                text: prediction.candidates[j].text.clone(),
                bank_index: prediction.candidates[j].bank_index,
                weight: prediction.weights.w[j],
            })
            .collect();
        Ok(prediction)
    }
}

/// One-shot inference with exact retrieval.
pub fn infer(
    x: &EmbeddingVector,
    bank: &ConceptBank,
    classes: &ClassSet,
    k: usize,
    solver: &SolverConfig,
) -> Result<Prediction, PipelineError> {
    Engine::new(bank.clone(), classes.clone(), Retriever::Exact)?.infer(x, k, solver)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::Solver;

    fn basis(d: usize) -> Vec<Vec<f32>> {
        (0..d)
            .map(|i| {
                let mut v = vec![0f32; d];
                v[i] = 1.0;
                v
            })
            .collect()
    }

    fn engine(classes: Vec<Vec<f32>>) -> Engine {
        let d = 4;
        let bank = ConceptBank::from_parts(
            "t",
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            EmbeddingMatrix::from_rows_normalized(d, &basis(d)).unwrap(),
        )
        .unwrap();
        let labels = (0..classes.len() as u32).map(|i| ClassLabel::new(i, &format!("class {i}"))).collect();
        let classes = ClassSet::new(labels, EmbeddingMatrix::from_rows_normalized(d, &classes).unwrap()).unwrap();
        Engine::new(bank, classes, Retriever::Exact).unwrap()
    }

    #[test]
    fn recovers_orthonormal_mixture() {
        let e = engine(vec![vec![0.6, 0.8, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]]);
        let x = EmbeddingVector::new(vec![0.6, 0.8, 0.0, 0.0]).unwrap();
        let p = e.infer(&x, 4, &SolverConfig::lasso(1e-4)).unwrap();
        assert_eq!(p.label_id, 0);
        assert_eq!(p.concepts.len(), 2);
        assert_eq!(p.concepts[0].text, "b");
        // closed form on an orthonormal active set: w = x_j - lambda / 2
        assert!((p.concepts[0].weight - (0.8 - 5e-5)).abs() < 1e-6);
        assert!((p.concepts[1].weight - (0.6 - 5e-5)).abs() < 1e-6);
        assert!(!p.fallback);
    }

    #[test]
    fn single_class_always_wins() {
        let e = engine(vec![vec![0.0, 0.0, 0.0, 1.0]]);
        let x = EmbeddingVector::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(e.infer(&x, 2, &SolverConfig::default()).unwrap().label_id, 0);
    }

    #[test]
    fn zero_shot_cases() {
        let e = engine(vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ]);
        let hit = e.zero_shot(&EmbeddingVector::new(vec![0.0, 0.0, 1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(hit.label_id, 3);
        assert_eq!(hit.class_scores[3], 1.0);
        let tie = e.zero_shot(&EmbeddingVector::new(vec![0.0, 1.0, 0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(tie.label_id, 1);
        let none = e.zero_shot(&EmbeddingVector::new(vec![0.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(none.label_id, 0);
        assert!(none.class_scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn huge_lambda_falls_back_to_zero_shot() {
        let e = engine(vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]);
        let x = EmbeddingVector::new(vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let p = e.infer(&x, 4, &SolverConfig::with_solver(Solver::Lasso { lambda: 10.0 })).unwrap();
        assert!(p.fallback);
        assert!(p.concepts.is_empty());
        assert_eq!(p.label_id, 1);
    }

    #[test]
    fn dimension_checked() {
        let e = engine(vec![vec![1.0, 0.0, 0.0, 0.0]]);
        let x = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            e.infer(&x, 2, &SolverConfig::default()),
            Err(PipelineError::DimensionMismatch { expected: 4, actual: 2 })
        ));
    }
}
