//! Evaluation metrics, intervention curves, PCA export and timing.

mod bench;
mod curves;
mod pca;

pub use bench::{benchmark_inference, write_bench_csv, BenchRow, DEFAULT_K_GRID, WARMUP_RUNS};
pub use curves::{deletion_curve, insertion_curve, write_deletion_csv, write_insertion_csv, DeletionRow, InsertionRow};
pub use pca::{pca2d, write_pca_csv, Pca2d};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{case_fold, ConceptBank};
use crate::pipeline::{ConceptScore, PipelineError, Prediction};
use crate::regress::ConceptWeights;
use crate::vecstore::{cosine_slices, EmbeddingMatrix, EmbeddingVector, VecError};

pub const DEFAULT_CLIP_TOP_N: usize = 10;
/// Reference concepts need a contribution above this to count.
pub const DEFAULT_COVERAGE_CUT: f64 = 0.05;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} predictions, {1} truths")]
    LengthMismatch(usize, usize),
    #[error("no samples")]
    Empty,
    #[error("no nonzero concepts to score")]
    NoNonzeroConcepts,
    #[error("reference concept set is empty")]
    EmptyReference,
    #[error("at least two concepts are needed")]
    TooFewConcepts,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("pooled points have zero variance")]
    DegenerateVariance,
    #[error("scorer has no embedding for concept {0:?}")]
    MissingScorerConcept(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Vector(#[from] VecError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fraction of exact label matches.
pub fn top1_accuracy(predictions: &[u32], truths: &[u32]) -> Result<f64, MetricsError> {
    if predictions.len() != truths.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), truths.len()));
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Mean cosine between a scorer image embedding and the scorer embeddings of
/// the `top_n` largest-|w| concepts. Row `j` of `scorer_concepts` belongs to
/// weight `j`.
pub fn clip_score(
    scorer_image: &EmbeddingVector,
    scorer_concepts: &EmbeddingMatrix,
    weights: &ConceptWeights,
    top_n: usize,
) -> Result<f64, MetricsError> {
    if scorer_concepts.count() != weights.len() {
        return Err(MetricsError::LengthMismatch(scorer_concepts.count(), weights.len()));
    }
    if scorer_concepts.dim() != scorer_image.dim() {
        return Err(MetricsError::DimensionMismatch(scorer_concepts.dim(), scorer_image.dim()));
    }
    let top = top_positions(&weights.w, top_n);
    if top.is_empty() {
        return Err(MetricsError::NoNonzeroConcepts);
    }
    let sum: f64 = top
        .iter()
        .map(|&j| cosine_slices(scorer_image.values(), scorer_concepts.row(j)))
        .sum();
    Ok(sum / top.len() as f64)
}

fn top_positions(w: &[f64], n: usize) -> Vec<usize> {
    let mut pos: Vec<usize> = (0..w.len()).filter(|&j| w[j] != 0.0).collect();
    pos.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
    pos.truncate(n);
    pos
}

/// `|predicted ∩ reference| / |reference|` over case-folded strings.
pub fn concept_coverage<S: AsRef<str>, T: AsRef<str>>(predicted: &[S], reference: &[T]) -> Result<f64, MetricsError> {
    let reference: HashSet<String> = reference.iter().map(|c| case_fold(c.as_ref())).collect();
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let predicted: HashSet<String> = predicted.iter().map(|c| case_fold(c.as_ref())).collect();
    Ok(reference.intersection(&predicted).count() as f64 / reference.len() as f64)
}

/// Concepts whose |weight| exceeds `cut`.
pub fn reference_set(concepts: &[ConceptScore], cut: f64) -> Vec<String> {
    concepts.iter().filter(|c| c.weight.abs() > cut).map(|c| c.text.clone()).collect()
}

/// Fraction of zero coefficients among `k` candidates.
pub fn sparsity(weights: &ConceptWeights, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    1.0 - weights.nonzero_count.min(k) as f64 / k as f64
}

/// Mean cosine over unordered pairs of distinct rows.
pub fn inner_redundancy(rows: &EmbeddingMatrix) -> Result<f64, MetricsError> {
    let n = rows.count();
    if n < 2 {
        return Err(MetricsError::TooFewConcepts);
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += cosine_slices(rows.row(i), rows.row(j));
        }
    }
    Ok(sum / (n * (n - 1) / 2) as f64)
}

/// L2 distance between the centroids of the two row-normalized sets.
pub fn modality_gap(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty);
    }
    if a.dim() != b.dim() {
        return Err(MetricsError::DimensionMismatch(a.dim(), b.dim()));
    }
    let ca = normalized(a)?.centroid();
    let cb = normalized(b)?.centroid();
    Ok(ca.iter().zip(&cb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

fn normalized(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix, MetricsError> {
    Ok(if m.is_normalized() { m.clone() } else { m.normalized()? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityGap {
    pub image_to_label: f64,
    pub concept_to_label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub label_id: u32,
    pub truth: u32,
    pub sparsity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_redundancy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_name: String,
    pub n_samples: usize,
    pub top1_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_clip_score: Option<f64>,
    pub mean_sparsity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_inner_redundancy: Option<f64>,
    pub modality_gap: ModalityGap,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_sample: Option<Vec<SampleRecord>>,
}

/// Embeddings from an independent model used to score explanations.
#[derive(Debug, Clone)]
pub struct Scorer {
    /// One row per evaluated sample.
    pub images: EmbeddingMatrix,
    /// Concept texts with their scorer embeddings.
    pub concepts: ConceptBank,
}

impl Scorer {
    fn concept_rows(&self, texts: &[&str]) -> Result<EmbeddingMatrix, MetricsError> {
        let mut data = Vec::with_capacity(texts.len() * self.concepts.dim());
        for t in texts {
            let i = self.concepts.find(t).ok_or_else(|| MetricsError::MissingScorerConcept(t.to_string()))?;
            data.extend_from_slice(self.concepts.embeddings().row(i));
        }
        Ok(EmbeddingMatrix::new(self.concepts.dim(), data, true)?)
    }
}

/// Aggregates the per-sample metrics over a batch of predictions.
pub fn evaluate(
    dataset_name: &str,
    predictions: &[Prediction],
    truths: &[u32],
    class_embeddings: &EmbeddingMatrix,
    scorer: Option<&Scorer>,
    keep_samples: bool,
) -> Result<EvalReport, MetricsError> {
    let labels: Vec<u32> = predictions.iter().map(|p| p.label_id).collect();
    let top1 = top1_accuracy(&labels, truths)?;
    if let Some(s) = scorer {
        if s.images.count() != predictions.len() {
            return Err(MetricsError::LengthMismatch(predictions.len(), s.images.count()));
        }
    }
    let mut records = Vec::with_capacity(predictions.len());
    for (i, p) in predictions.iter().enumerate() {
        let (clip, redundancy) = match scorer {
            Some(s) => {
                let top = top_positions(&p.weights.w, DEFAULT_CLIP_TOP_N);
                if top.is_empty() {
                    (None, None)
                } else {
                    let texts: Vec<&str> = top.iter().map(|&j| p.candidates[j].text.as_str()).collect();
                    let rows = s.concept_rows(&texts)?;
                    let image = s.images.row(i);
                    let clip = top.iter().enumerate().map(|(r, _)| cosine_slices(image, rows.row(r))).sum::<f64>()
                        / top.len() as f64;
                    (Some(clip), inner_redundancy(&rows).ok())
                }
            }
            None => (None, None),
        };
        records.push(SampleRecord {
            index: i,
            label_id: p.label_id,
            truth: truths[i],
            sparsity: sparsity(&p.weights, p.weights.len()),
            clip_score: clip,
            inner_redundancy: redundancy,
        });
    }
    let mean_of = |f: &dyn Fn(&SampleRecord) -> Option<f64>| {
        let v: Vec<f64> = records.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let mean_clip_score = mean_of(&|r| r.clip_score);
    let mean_inner_redundancy = mean_of(&|r| r.inner_redundancy);
    let mean_sparsity = records.iter().map(|r| r.sparsity).sum::<f64>() / records.len() as f64;

    let dim = class_embeddings.dim();
    let mut images = Vec::with_capacity(predictions.len() * dim);
    let mut recon = Vec::new();
    for p in predictions {
        images.extend_from_slice(p.input.values());
        if p.reconstructed.norm() > 0.0 {
            recon.extend(crate::vecstore::normalize(p.reconstructed.values())?.into_values());
        }
    }
    let images = EmbeddingMatrix::new(dim, images, false)?;
    let image_to_label = modality_gap(&images, class_embeddings)?;
    let concept_to_label = if recon.is_empty() {
        f64::NAN
    } else {
        modality_gap(&EmbeddingMatrix::new(dim, recon, true)?, class_embeddings)?
    };
    Ok(EvalReport {
        dataset_name: dataset_name.to_string(),
        n_samples: predictions.len(),
        top1_accuracy: top1,
        mean_clip_score,
        mean_sparsity,
        mean_inner_redundancy,
        modality_gap: ModalityGap {
            image_to_label,
            concept_to_label,
        },
        per_sample: keep_samples.then_some(records),
    })
}
