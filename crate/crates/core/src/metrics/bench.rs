use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use super::MetricsError;
use crate::pipeline::{Candidate, ConceptSource, Engine};
use crate::regress::{RegressionProblem, SolverConfig};
use crate::vecstore::EmbeddingVector;

pub const DEFAULT_K_GRID: [usize; 5] = [128, 256, 512, 1024, 2048];
pub const WARMUP_RUNS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub k: usize,
    pub samples: usize,
    pub total_ms: f64,
    pub retrieval_ms: f64,
    pub regression_ms: f64,
    pub prediction_ms: f64,
    /// Present when truths were supplied.
    pub accuracy: Option<f64>,
}

fn ms(a: Instant, b: Instant) -> f64 {
    (b - a).as_secs_f64() * 1e3
}

/// Mean per-sample wall time of each inference stage for every `k`. The
/// first [`WARMUP_RUNS`] inferences per `k` are not recorded.
pub fn benchmark_inference(
    engine: &Engine,
    samples: &[EmbeddingVector],
    truths: Option<&[u32]>,
    k_grid: &[usize],
    solver: &SolverConfig,
) -> Result<Vec<BenchRow>, MetricsError> {
    if k_grid.is_empty() {
        return Err(MetricsError::InvalidParameter("k grid is empty".into()));
    }
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(t) = truths {
        if t.len() != samples.len() {
            return Err(MetricsError::LengthMismatch(samples.len(), t.len()));
        }
    }
    let rows_matrix = engine.bank().embeddings();
    let mut out = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        let mut sums = [0f64; 4];
        let mut hits = 0usize;
        for run in 0..WARMUP_RUNS + samples.len() {
            let measured = run >= WARMUP_RUNS;
            let i = if measured { run - WARMUP_RUNS } else { run % samples.len() };
            let t0 = Instant::now();
            let x = engine.prepare_input(&samples[i])?;
            let retrieval = engine
                .retriever()
                .search(&x, rows_matrix, k)
                .map_err(crate::pipeline::PipelineError::from)?;
            let t1 = Instant::now();
            let design = rows_matrix.select_rows(&retrieval.indices);
            let problem = RegressionProblem::new(&design, &x).map_err(crate::pipeline::PipelineError::from)?;
            let weights = solver.solve(&problem).map_err(crate::pipeline::PipelineError::from)?;
            let t2 = Instant::now();
            let candidates = retrieval
                .indices
                .iter()
                .map(|&j| Candidate {
                    text: engine.bank().concept(j).to_string(),
                    bank_index: Some(j),
                    source: ConceptSource::Retrieved,
                    embedding: None,
                })
                .collect();
            let p = engine.assemble(x, candidates, weights, retrieval)?;
            let t3 = Instant::now();
            if measured {
                sums[0] += ms(t0, t3);
                sums[1] += ms(t0, t1);
                sums[2] += ms(t1, t2);
                sums[3] += ms(t2, t3);
                if truths.is_some_and(|t| t[i] == p.label_id) {
                    hits += 1;
                }
            }
        }
        let n = samples.len() as f64;
        out.push(BenchRow {
            k,
            samples: samples.len(),
            total_ms: sums[0] / n,
            retrieval_ms: sums[1] / n,
            regression_ms: sums[2] / n,
            prediction_ms: sums[3] / n,
            accuracy: truths.map(|_| hits as f64 / n),
        });
    }
    Ok(out)
}

/// Columns: `k,samples,total_ms,retrieval_ms,regression_ms,prediction_ms,accuracy`.
pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
