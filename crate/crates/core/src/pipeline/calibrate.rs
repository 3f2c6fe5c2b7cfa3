use serde::{Deserialize, Serialize};

use super::{Engine, PipelineError};
use crate::regress::{RegressionProblem, SolverConfig};
use crate::vecstore::EmbeddingVector;

pub const DEFAULT_LAMBDA_GRID: [f64; 7] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];
pub const DEFAULT_TARGET_RATIO: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub lambda: f64,
    pub mean_nonzero_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub lambda: f64,
    /// No grid value cleared the target; `lambda` is the grid minimum.
    pub no_qualifier: bool,
    pub target_ratio: f64,
    pub points: Vec<CalibrationPoint>,
}

/// The largest lambda whose mean nonzero ratio exceeds `target_ratio`, or the
/// smallest lambda flagged as unqualified when none does.
pub fn select_lambda(points: &[CalibrationPoint], target_ratio: f64) -> Result<(f64, bool), PipelineError> {
    if points.is_empty() {
        return Err(PipelineError::InvalidParameter("lambda grid is empty".into()));
    }
    let best = points
        .iter()
        .filter(|p| p.mean_nonzero_ratio > target_ratio)
        .map(|p| p.lambda)
        .fold(None, |acc: Option<f64>, l| Some(acc.map_or(l, |a| a.max(l))));
    Ok(match best {
        Some(l) => (l, false),
        None => (points.iter().map(|p| p.lambda).fold(f64::INFINITY, f64::min), true),
    })
}

impl Engine {
    /// Solves lasso cold at every grid value over all samples and applies
    /// [`select_lambda`] to the mean `nonzero_count / k` ratios.
    pub fn calibrate_lambda(
        &self,
        samples: &[EmbeddingVector],
        k: usize,
        grid: &[f64],
        target_ratio: f64,
        base: &SolverConfig,
    ) -> Result<Calibration, PipelineError> {
        if samples.is_empty() {
            return Err(PipelineError::EmptySamples);
        }
        if grid.is_empty() {
            return Err(PipelineError::InvalidParameter("lambda grid is empty".into()));
        }
        if !(target_ratio > 0.0 && target_ratio < 1.0) {
            return Err(PipelineError::InvalidParameter(format!("target ratio {target_ratio} outside (0, 1)")));
        }
        let problems = samples
            .iter()
            .map(|x| {
                let x = self.prepare_input(x)?;
                let hits = self.retriever().search(&x, self.bank().embeddings(), k)?;
                let design = self.bank().embeddings().select_rows(&hits.indices);
                Ok(RegressionProblem::new(&design, &x)?)
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let mut points = Vec::with_capacity(grid.len());
        for &lambda in grid {
            let cfg = SolverConfig {
                solver: crate::regress::Solver::Lasso { lambda },
                ..*base
            };
            let mut total = 0.0;
            for p in &problems {
                let w = cfg.solve(p)?;
                total += w.nonzero_count as f64 / p.n_features() as f64;
            }
            points.push(CalibrationPoint {
                lambda,
                mean_nonzero_ratio: total / problems.len() as f64,
            });
        }
        let (lambda, no_qualifier) = select_lambda(&points, target_ratio)?;
        Ok(Calibration {
            lambda,
            no_qualifier,
            target_ratio,
            points,
        })
    }
}
