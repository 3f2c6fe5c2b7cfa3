use std::io::Write;

use serde::Serialize;

use super::{top1_accuracy, MetricsError};
use crate::pipeline::{DeletionOrder, Engine, Prediction};
use crate::vecstore::EmbeddingVector;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeletionRow {
    pub order: String,
    pub ratio: f64,
    pub accuracy: f64,
    /// Mean `||x - F W||^2` after deletion.
    pub mean_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InsertionRow {
    pub count: usize,
    pub accuracy: f64,
    pub mean_residual: f64,
}

pub(crate) fn squared_residual(p: &Prediction) -> f64 {
    p.input
        .values()
        .iter()
        .zip(p.reconstructed.values())
        .map(|(&x, &r)| {
            let d = x as f64 - r as f64;
            d * d
        })
        .sum()
}

fn summarize(preds: &[Prediction], truths: &[u32]) -> Result<(f64, f64), MetricsError> {
    let labels: Vec<u32> = preds.iter().map(|p| p.label_id).collect();
    let acc = top1_accuracy(&labels, truths)?;
    let residual = preds.iter().map(squared_residual).sum::<f64>() / preds.len() as f64;
    Ok((acc, residual))
}

/// Accuracy and residual after deleting a fraction of each prediction's
/// concepts, per order and ratio.
pub fn deletion_curve(
    engine: &Engine,
    preds: &[Prediction],
    truths: &[u32],
    orders: &[DeletionOrder],
    ratios: &[f64],
) -> Result<Vec<DeletionRow>, MetricsError> {
    if preds.len() != truths.len() {
        return Err(MetricsError::LengthMismatch(preds.len(), truths.len()));
    }
    let mut rows = Vec::with_capacity(orders.len() * ratios.len());
    for &order in orders {
        for &ratio in ratios {
            let after = preds
                .iter()
                .map(|p| engine.intervene_delete(p, order, ratio))
                .collect::<Result<Vec<_>, _>>()?;
            let (accuracy, mean_residual) = summarize(&after, truths)?;
            rows.push(DeletionRow {
                order: order.name().to_string(),
                ratio,
                accuracy,
                mean_residual,
            });
        }
    }
    Ok(rows)
}

/// Accuracy and residual after inserting the first `m` ground-truth concepts
/// of each sample and re-fitting. `m = 0` reports the predictions unchanged.
pub fn insertion_curve(
    engine: &Engine,
    preds: &[Prediction],
    truths: &[u32],
    gt: &[Vec<(String, EmbeddingVector)>],
    counts: &[usize],
) -> Result<Vec<InsertionRow>, MetricsError> {
    if preds.len() != truths.len() || preds.len() != gt.len() {
        return Err(MetricsError::LengthMismatch(preds.len(), truths.len().min(gt.len())));
    }
    let mut rows = Vec::with_capacity(counts.len());
    for &m in counts {
        let after = if m == 0 {
            preds.to_vec()
        } else {
            preds
                .iter()
                .zip(gt)
                .map(|(p, g)| engine.intervene_insert(p, &g[..m.min(g.len())]))
                .collect::<Result<Vec<_>, _>>()?
        };
        let (accuracy, mean_residual) = summarize(&after, truths)?;
        rows.push(InsertionRow {
            count: m,
            accuracy,
            mean_residual,
        });
    }
    Ok(rows)
}

fn write_rows<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `order,ratio,accuracy,mean_residual`.
pub fn write_deletion_csv<W: Write>(rows: &[DeletionRow], out: W) -> Result<(), MetricsError> {
    write_rows(rows, out)
}

/// Columns: `count,accuracy,mean_residual`.
pub fn write_insertion_csv<W: Write>(rows: &[InsertionRow], out: W) -> Result<(), MetricsError> {
    write_rows(rows, out)
}
