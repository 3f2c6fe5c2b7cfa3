//! Wire types. Floats go out as `f32`, which serializes in at most nine
//! significant digits and reads back to the same bits.

use serde::{Deserialize, Serialize};
use zcbm_core::pipeline::{ConceptSource, HistoryEntry, InterventionSession, Prediction};
use zcbm_core::regress::SolverKind;
use zcbm_core::ClassSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferRequest {
    pub embedding: Vec<f64>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub solver: Option<String>,
    #[serde(default)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScoreDto {
    pub label_id: u32,
    pub name: String,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptDto {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank_index: Option<usize>,
    pub weight: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDto {
    pub label_id: u32,
    pub label: String,
    pub fallback: bool,
    pub class_scores: Vec<ClassScoreDto>,
    /// Nonzero weights, largest magnitude first.
    pub concepts: Vec<ConceptDto>,
    pub nonzero_count: usize,
    pub retrieved: usize,
    pub solver: SolverKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f32>,
    pub converged: bool,
}

impl PredictionDto {
    pub fn new(p: &Prediction, classes: &ClassSet) -> Self {
        let class_scores = classes
            .labels()
            .iter()
            .zip(&p.class_scores)
            .map(|(l, &s)| ClassScoreDto {
                label_id: l.label_id,
                name: l.name.clone(),
                score: s as f32,
            })
            .collect();
        let label = classes
            .position(p.label_id)
            .map(|i| classes.labels()[i].name.clone())
            .unwrap_or_default();
        Self {
            label_id: p.label_id,
            label,
            fallback: p.fallback,
            class_scores,
            concepts: p
                .concepts
                .iter()
                .map(|c| ConceptDto {
                    text: c.text.clone(),
                    bank_index: c.bank_index,
                    weight: c.weight as f32,
                })
                .collect(),
            nonzero_count: p.weights.nonzero_count,
            retrieved: p.candidates.len(),
            solver: p.weights.solver,
            lambda: p.weights.lambda.map(|l| l as f32),
            converged: p.weights.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub prediction: PredictionDto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConceptDto {
    /// Address for delete and restore edits.
    pub index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bank_index: Option<usize>,
    pub source: ConceptSource,
    pub weight: f32,
    pub deleted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDto {
    pub session_id: String,
    pub k: usize,
    pub pending: bool,
    pub base_label_id: u32,
    pub prediction: PredictionDto,
    pub concepts: Vec<SessionConceptDto>,
    pub history: Vec<HistoryEntry>,
}

impl SessionDto {
    pub fn new(s: &InterventionSession, classes: &ClassSet) -> Self {
        Self {
            session_id: s.session_id.clone(),
            k: s.k,
            pending: s.pending,
            base_label_id: s.base.label_id,
            prediction: PredictionDto::new(&s.current, classes),
            concepts: s
                .concepts
                .iter()
                .enumerate()
                .map(|(index, c)| SessionConceptDto {
                    index,
                    text: c.candidate.text.clone(),
                    bank_index: c.candidate.bank_index,
                    source: c.candidate.source,
                    weight: c.weight as f32,
                    deleted: c.deleted,
                })
                .collect(),
            history: s.history.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub op: String,
    #[serde(default)]
    pub concept: Option<String>,
    #[serde(default)]
    pub index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub index: usize,
    pub text: String,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub query: String,
    pub results: Vec<SearchHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub bank_count: usize,
    pub dim: usize,
}
