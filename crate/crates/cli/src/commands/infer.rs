use std::io::Write;

use serde::{Deserialize, Serialize};
use zcbm_core::Prediction;

use crate::args::{InferArgs, ProviderArgs};
use crate::{load_embeddings, load_engine, output, required, solver_config, CliError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub text: String,
    pub weight: f64,
}

/// One line of `infer` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferRecord {
    pub index: usize,
    pub label_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_scores: Option<Vec<f64>>,
    pub concepts: Vec<ConceptRecord>,
    pub fallback: bool,
}

impl InferRecord {
    pub fn new(index: usize, p: &Prediction, class_scores: bool) -> Self {
        Self {
            index,
            label_id: p.label_id,
            class_scores: class_scores.then(|| p.class_scores.clone()),
            concepts: p
                .concepts
                .iter()
                .map(|c| ConceptRecord {
                    text: c.text.clone(),
                    weight: c.weight,
                })
                .collect(),
            fallback: p.fallback,
        }
    }
}

pub fn cmd_infer(a: &InferArgs, p: &ProviderArgs) -> Result<(), CliError> {
    let solver = solver_config(&a.solver)?;
    let input = required(&a.input, "input")?;
    let engine = load_engine(&a.engine, p)?;
    let xs = load_embeddings(input)?;
    if xs.dim() != engine.dim() {
        return Err(CliError::input(format!(
            "dimension mismatch: inputs have {}, the bank has {}",
            xs.dim(),
            engine.dim()
        ))
        .at(input));
    }
    let preds = engine.infer_batch(&xs, a.solver.k, &solver).map_err(|e| CliError::from(e).at(input))?;
    let mut out = output(a.out.as_ref())?;
    for (i, pred) in preds.iter().enumerate() {
        serde_json::to_writer(&mut out, &InferRecord::new(i, pred, a.class_scores))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
