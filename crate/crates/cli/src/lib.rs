//! The `zcbm` command line.
//!
//! Exit codes: 0 success, 2 input error, 3 embedding provider error,
//! 4 internal error.

pub mod args;
mod commands;
mod config;
mod error;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches};
use zcbm_core::bank::ConceptBank;
use zcbm_core::pipeline::{read_class_file, ClassSet, Engine};
use zcbm_core::regress::{Solver, SolverConfig};
use zcbm_core::retrieval::{IvfIndex, Retriever};
use zcbm_core::vecstore::{load_matrix, EmbeddingMatrix, EmbeddingVector, HttpProvider, ProviderConfig};

pub use args::{Cli, Command};
pub use commands::{
    cmd_bench, cmd_build_bank, cmd_calibrate, cmd_eval, cmd_index, cmd_infer, cmd_serve, InferRecord, RecallReport,
};
pub use error::CliError;

use args::{EngineArgs, ProviderArgs, SolverArgs, SolverName};

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let result = Cli::from_arg_matches(&matches)
        .map_err(|e| CliError::input(e.to_string()))
        .and_then(|cli| execute(cli, &matches));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(mut cli: Cli, matches: &clap::ArgMatches) -> Result<(), CliError> {
    if let Some(path) = cli.config.clone() {
        let cfg = config::load(&path)?;
        let (name, sub) = matches.subcommand().expect("a subcommand is required");
        cli.provider = config::merge(&cli.provider, matches, &cfg, name)?;
        cli.command = match &cli.command {
            Command::BuildBank(a) => Command::BuildBank(config::merge(a, sub, &cfg, name)?),
            Command::Index(a) => Command::Index(config::merge(a, sub, &cfg, name)?),
            Command::Infer(a) => Command::Infer(config::merge(a, sub, &cfg, name)?),
            Command::Eval(a) => Command::Eval(config::merge(a, sub, &cfg, name)?),
            Command::Calibrate(a) => Command::Calibrate(config::merge(a, sub, &cfg, name)?),
            Command::Bench(a) => Command::Bench(config::merge(a, sub, &cfg, name)?),
            Command::Serve(a) => Command::Serve(config::merge(a, sub, &cfg, name)?),
        };
    }
    let p = &cli.provider;
    match &cli.command {
        Command::BuildBank(a) => cmd_build_bank(a, p).map(|_| ()),
        Command::Index(a) => cmd_index(a).map(|_| ()),
        Command::Infer(a) => cmd_infer(a, p),
        Command::Eval(a) => cmd_eval(a, p).map(|_| ()),
        Command::Calibrate(a) => cmd_calibrate(a).map(|_| ()),
        Command::Bench(a) => cmd_bench(a, p).map(|_| ()),
        Command::Serve(a) => cmd_serve(a, p),
    }
}

pub(crate) fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    value
        .as_ref()
        .ok_or_else(|| CliError::input(format!("missing --{flag} (give it as a flag or in --config)")))
}

pub(crate) fn provider_config(p: &ProviderArgs) -> ProviderConfig {
    let mut cfg = ProviderConfig {
        batch_size: p.provider_batch_size,
        timeout_secs: p.provider_timeout,
        prompt_template: p.prompt_template.clone(),
        ..ProviderConfig::default()
    };
    if let Some(url) = &p.provider_url {
        cfg.endpoint = url.clone();
    }
    cfg
}

/// A provider at the configured or default endpoint.
pub(crate) fn provider(p: &ProviderArgs) -> Result<HttpProvider, CliError> {
    Ok(HttpProvider::new(provider_config(p))?)
}

/// A provider only when an endpoint was set explicitly.
pub(crate) fn optional_provider(p: &ProviderArgs) -> Result<Option<HttpProvider>, CliError> {
    p.provider_url.as_ref().map(|_| provider(p)).transpose()
}

pub(crate) fn load_bank(path: &Path) -> Result<ConceptBank, CliError> {
    ConceptBank::load(path).map_err(|e| CliError::from(e).at(path))
}

pub(crate) fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix, CliError> {
    load_matrix(path).map_err(|e| CliError::from(e).at(path))
}

pub(crate) fn load_rows(path: &Path) -> Result<Vec<EmbeddingVector>, CliError> {
    let m = load_embeddings(path)?;
    m.rows()
        .map(|r| EmbeddingVector::new(r.to_vec()).map_err(|e| CliError::from(e).at(path)))
        .collect()
}

/// Class labels with embeddings from `class_embeddings` or, failing that,
/// from the provider.
pub(crate) fn load_classes(
    classes: &Path,
    class_embeddings: Option<&PathBuf>,
    p: &ProviderArgs,
) -> Result<ClassSet, CliError> {
    let labels = read_class_file(classes)?;
    Ok(match class_embeddings {
        Some(path) => ClassSet::new(labels, load_embeddings(path)?).map_err(|e| CliError::from(e).at(path))?,
        None => ClassSet::embed(labels, &provider(p)?)?,
    })
}

pub(crate) fn load_retriever(index: Option<&PathBuf>, n_probe: Option<usize>, bank: &ConceptBank) -> Result<Retriever, CliError> {
    let Some(dir) = index else { return Ok(Retriever::Exact) };
    let mut ivf = IvfIndex::load(dir).map_err(|e| CliError::from(e).at(dir))?;
    if ivf.row_count() != bank.len() {
        return Err(CliError::input(format!(
            "index covers {} rows but the bank has {}",
            ivf.row_count(),
            bank.len()
        ))
        .at(dir));
    }
    if let Some(n) = n_probe {
        ivf.set_n_probe(n)?;
    }
    Ok(Retriever::Ivf(ivf))
}

pub(crate) fn load_engine(e: &EngineArgs, p: &ProviderArgs) -> Result<Engine, CliError> {
    let bank = load_bank(required(&e.bank, "bank")?)?;
    let classes = load_classes(required(&e.classes, "classes")?, e.class_embeddings.as_ref(), p)?;
    let retriever = load_retriever(e.index.as_ref(), e.n_probe, &bank)?;
    Ok(Engine::new(bank, classes, retriever)?)
}

pub(crate) fn solver_config(s: &SolverArgs) -> Result<SolverConfig, CliError> {
    let solver = match s.solver {
        SolverName::Lasso => Solver::Lasso { lambda: s.lambda },
        SolverName::ElasticNet => Solver::ElasticNet {
            lambda1: s.lambda,
            lambda2: s.lambda2,
        },
        SolverName::Htp => Solver::Htp { s: s.s, step: s.step },
        SolverName::LeastSquares => Solver::LeastSquares,
        SolverName::Similarity => Solver::Similarity,
    };
    let cfg = SolverConfig {
        solver,
        max_iter: s.max_iter,
        tol: s.tol,
    };
    cfg.validate().map_err(|e| CliError::input(e.to_string()))?;
    if s.k == 0 {
        return Err(CliError::input("--k must be at least 1"));
    }
    Ok(cfg)
}

/// One label id per non-empty line.
pub(crate) fn read_truth(path: &Path) -> Result<Vec<u32>, CliError> {
    let f = File::open(path).map_err(|e| CliError::input(e.to_string()).at(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::input(e.to_string()).at(path))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(
            t.parse()
                .map_err(|_| CliError::input(format!("line {}: {t:?} is not a label id", i + 1)).at(path))?,
        );
    }
    Ok(out)
}

/// A buffered file, or stdout when `path` is `None`.
pub(crate) fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(std::io::BufWriter::new(File::create(p).map_err(|e| CliError::Internal(format!("{}: {e}", p.display())))?))
        }
        None => Box::new(std::io::BufWriter::new(std::io::stdout().lock())),
    })
}
