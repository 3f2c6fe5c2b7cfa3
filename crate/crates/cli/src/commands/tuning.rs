use std::io::Write;

use zcbm_core::metrics::{benchmark_inference, write_bench_csv, BenchRow};
use zcbm_core::pipeline::{Calibration, ClassLabel, ClassSet, Engine};
use zcbm_core::regress::SolverConfig;
use zcbm_core::vecstore::EmbeddingMatrix;

use crate::args::{BenchArgs, CalibrateArgs, ProviderArgs};
use crate::{load_bank, load_engine, load_retriever, load_rows, output, read_truth, required, solver_config, CliError};

pub fn cmd_calibrate(a: &CalibrateArgs) -> Result<Calibration, CliError> {
    let input = required(&a.input, "input")?;
    if a.k == 0 {
        return Err(CliError::input("--k must be at least 1"));
    }
    let bank = load_bank(required(&a.bank, "bank")?)?;
    let retriever = load_retriever(a.index.as_ref(), None, &bank)?;
    // Calibration never classifies; a single placeholder class satisfies the engine.
    let placeholder = ClassSet::new(
        vec![ClassLabel::new(0, "unused")],
        EmbeddingMatrix::new(bank.dim(), bank.embeddings().row(0).to_vec(), true)?,
    )?;
    let engine = Engine::new(bank, placeholder, retriever)?;
    let samples = load_rows(input)?;
    let base = SolverConfig {
        max_iter: a.max_iter,
        tol: a.tol,
        ..SolverConfig::default()
    };
    let cal = engine.calibrate_lambda(&samples, a.k, &a.grid, a.target_ratio, &base)?;
    println!("lambda {:e}", cal.lambda);
    if cal.no_qualifier {
        eprintln!(
            "warning: no grid value reaches a mean nonzero ratio above {}; using the smallest",
            cal.target_ratio
        );
    }
    let json = serde_json::to_string_pretty(&cal)?;
    match &a.out {
        Some(path) => {
            let mut out = output(Some(path))?;
            writeln!(out, "{json}")?;
            out.flush()?;
        }
        None => println!("{json}"),
    }
    Ok(cal)
}

pub fn cmd_bench(a: &BenchArgs, p: &ProviderArgs) -> Result<Vec<BenchRow>, CliError> {
    let solver = solver_config(&a.solver)?;
    let input = required(&a.input, "input")?;
    if a.k_grid.contains(&0) {
        return Err(CliError::input("--k-grid values must be at least 1"));
    }
    let engine = load_engine(&a.engine, p)?;
    let samples = load_rows(input)?;
    let truths = a.truth.as_deref().map(read_truth).transpose()?;
    let rows = benchmark_inference(&engine, &samples, truths.as_deref(), &a.k_grid, &solver)?;
    let mut out = output(a.out.as_ref())?;
    write_bench_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(rows)
}
