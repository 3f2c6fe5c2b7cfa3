use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::Path;

use zcbm_core::bank::ConceptBank;
use zcbm_core::metrics::{
    deletion_curve, evaluate, insertion_curve, pca2d, write_deletion_csv, write_insertion_csv, write_pca_csv, EvalReport,
    Scorer,
};
use zcbm_core::pipeline::{DeletionOrder, Engine};
use zcbm_core::vecstore::{normalize, Embedder, EmbeddingMatrix, EmbeddingVector};

use crate::args::{EvalArgs, ProviderArgs};
use crate::{load_bank, load_embeddings, load_engine, optional_provider, read_truth, required, solver_config, CliError};

pub(crate) const SCORER_IMAGES: &str = "images.zcbm";

fn parse_orders(names: &[String], seed: u64) -> Result<Vec<DeletionOrder>, CliError> {
    names
        .iter()
        .map(|n| match n.trim() {
            "ascending" => Ok(DeletionOrder::Ascending),
            "descending" => Ok(DeletionOrder::Descending),
            "random" => Ok(DeletionOrder::Random(seed)),
            other => Err(CliError::input(format!("unknown deletion order {other:?}"))),
        })
        .collect()
}

fn load_scorer(dir: &Path) -> Result<Scorer, CliError> {
    Ok(Scorer {
        images: load_embeddings(&dir.join(SCORER_IMAGES))?,
        concepts: load_bank(dir)?,
    })
}

fn read_gt(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let f = File::open(path).map_err(|e| CliError::input(e.to_string()).at(path))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(|e| CliError::input(e.to_string()).at(path))?;
            serde_json::from_str(&line)
                .map_err(|e| CliError::input(format!("line {}: expected a JSON array of strings: {e}", i + 1)).at(path))
        })
        .collect()
}

/// Bank concepts reuse their bank row; other texts are embedded in one
/// provider call.
fn embed_gt(
    gt: &[Vec<String>],
    bank: &ConceptBank,
    provider: Option<&dyn Embedder>,
) -> Result<Vec<Vec<(String, EmbeddingVector)>>, CliError> {
    let missing: Vec<String> = gt
        .iter()
        .flatten()
        .filter(|t| bank.find(t).is_none())
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut fetched: HashMap<String, EmbeddingVector> = HashMap::new();
    if !missing.is_empty() {
        let Some(e) = provider else {
            return Err(CliError::input(format!(
                "{} insertion concepts are not in the bank (first: {:?}); set --provider-url to embed them",
                missing.len(),
                missing[0]
            )));
        };
        let m = e.embed(&missing)?;
        if m.dim() != bank.dim() {
            return Err(CliError::Provider(format!(
                "provider returned dimension {}, the bank has {}",
                m.dim(),
                bank.dim()
            )));
        }
        for (t, row) in missing.iter().zip(m.rows()) {
            fetched.insert(t.clone(), normalize(row)?);
        }
    }
    Ok(gt
        .iter()
        .map(|row| {
            row.iter()
                .map(|t| {
                    let v = match bank.find(t) {
                        Some(i) => bank.embeddings().row_vector(i),
                        None => fetched[t].clone(),
                    };
                    (t.clone(), v)
                })
                .collect()
        })
        .collect())
}

fn write_pca(engine: &Engine, xs: &EmbeddingMatrix, preds: &[zcbm_core::Prediction], path: &Path) -> Result<(), CliError> {
    let data: Vec<f32> = preds.iter().flat_map(|p| p.reconstructed.values().to_vec()).collect();
    let recon = EmbeddingMatrix::new(engine.dim(), data, false)?;
    match pca2d(&[("image", xs), ("reconstruction", &recon), ("label", engine.classes().embeddings())]) {
        Ok(pca) => write_pca_csv(&pca, BufWriter::new(File::create(path)?))?,
        Err(e) => log::warn!("skipping PCA export: {e}"),
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, p: &ProviderArgs) -> Result<EvalReport, CliError> {
    let solver = solver_config(&a.solver)?;
    let input = required(&a.input, "input")?;
    let truth_path = required(&a.truth, "truth")?;
    let orders = parse_orders(&a.deletion_orders, a.seed)?;
    if let Some(r) = a.deletion_grid.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(CliError::input(format!("deletion ratio {r} outside [0, 1]")));
    }
    let engine = load_engine(&a.engine, p)?;
    let xs = load_embeddings(input)?;
    let truths = read_truth(truth_path)?;
    if truths.len() != xs.count() {
        return Err(CliError::input(format!("{} labels for {} inputs", truths.len(), xs.count())).at(truth_path));
    }
    let preds = engine.infer_batch(&xs, a.solver.k, &solver).map_err(|e| CliError::from(e).at(input))?;
    let scorer = a.scorer_embeddings.as_deref().map(load_scorer).transpose()?;
    let report = evaluate(
        &a.dataset_name,
        &preds,
        &truths,
        engine.classes().embeddings(),
        scorer.as_ref(),
        a.per_sample,
    )?;

    std::fs::create_dir_all(&a.out)?;
    let rows = deletion_curve(&engine, &preds, &truths, &orders, &a.deletion_grid)?;
    write_deletion_csv(&rows, BufWriter::new(File::create(a.out.join("deletion.csv"))?))?;
    if let Some(gt_path) = &a.insertion_gt {
        let gt = read_gt(gt_path)?;
        if gt.len() != preds.len() {
            return Err(CliError::input(format!("{} concept lists for {} inputs", gt.len(), preds.len())).at(gt_path));
        }
        let provider = optional_provider(p)?;
        let gt = embed_gt(&gt, engine.bank(), provider.as_ref().map(|e| e as &dyn Embedder))?;
        let max = gt.iter().map(Vec::len).max().unwrap_or(0);
        let counts: Vec<usize> = (0..=max).collect();
        let rows = insertion_curve(&engine, &preds, &truths, &gt, &counts)?;
        write_insertion_csv(&rows, BufWriter::new(File::create(a.out.join("insertion.csv"))?))?;
    }
    let normalized_inputs = {
        let rows: Vec<Vec<f32>> = xs.rows().map(|r| r.to_vec()).collect();
        EmbeddingMatrix::from_rows_normalized(xs.dim(), &rows)?
    };
    write_pca(&engine, &normalized_inputs, &preds, &a.out.join("pca.csv"))?;
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(a.out.join("report.json"), format!("{json}\n"))?;
    println!("{json}");
    Ok(report)
}
