use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use zcbm_core::bank::{build_bank, read_blocklist, read_tagged_file, BankConfig, FiltersApplied};
use zcbm_core::pipeline::read_class_file;
use zcbm_core::retrieval::{build_ivf, recall, topk_exact};
use zcbm_core::vecstore::{normalize, EmbeddingVector};

use crate::args::{BuildBankArgs, IndexArgs, ProviderArgs};
use crate::{load_bank, load_classes, load_embeddings, provider, required, CliError};

pub fn cmd_build_bank(a: &BuildBankArgs, p: &ProviderArgs) -> Result<PathBuf, CliError> {
    if a.captions.is_empty() {
        return Err(CliError::input("missing --captions"));
    }
    let out = required(&a.out, "out")?;
    let mut corpora = Vec::with_capacity(a.captions.len());
    for path in &a.captions {
        if !path.is_file() {
            return Err(CliError::input("caption file not found").at(path));
        }
        corpora.push((path.display().to_string(), read_tagged_file(path)?));
    }
    let mut cfg = BankConfig {
        name: a.name.clone(),
        filters: FiltersApplied {
            max_chars: a.max_chars,
            max_words: a.max_words,
            dedup_threshold: a.dedup_threshold,
            dedup_top_m: a.dedup_top_m,
            class_filter_threshold: None,
            min_count: a.min_count,
        },
        ..BankConfig::default()
    };
    if let Some(class_file) = &a.class_file {
        let classes = load_classes(class_file, a.class_embeddings.as_ref(), p)?;
        cfg.class_embeddings = Some(classes.embeddings().clone());
        cfg.filters.class_filter_threshold = Some(a.class_threshold);
    } else if a.class_embeddings.is_some() {
        read_class_file(Path::new("--class-file"))?;
    }
    if let Some(path) = &a.blocklist {
        cfg.blocklist = Some(read_blocklist(path)?);
    }
    let embedder = provider(p)?;
    let (bank, stats) = build_bank(corpora, &cfg, &embedder)?;
    let manifest = bank.save(out).map_err(|e| CliError::from(e).at(out))?;
    println!("captions {}", stats.captions);
    println!("phrases {}", stats.phrases);
    println!("unique {}", stats.unique);
    println!("after_min_count {}", stats.after_min_count);
    println!("after_length {}", stats.after_length);
    println!("after_blocklist {}", stats.after_blocklist);
    println!("after_dedup {}", stats.after_dedup);
    println!("after_class_filter {}", stats.after_class_filter);
    println!("manifest {}", manifest.display());
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallReport {
    pub index: String,
    pub n_list: usize,
    pub n_probe: usize,
    pub queries: usize,
    pub k: usize,
    pub recall: f64,
}

pub fn cmd_index(a: &IndexArgs) -> Result<RecallReport, CliError> {
    let bank_path = required(&a.bank, "bank")?;
    let bank = load_bank(bank_path)?;
    let rows = bank.embeddings();
    let n_list = a.n_list.unwrap_or_else(|| ((rows.count() as f64).sqrt().round() as usize).max(1));
    let ivf = build_ivf(rows, n_list, a.seed)?.with_n_probe(a.n_probe.min(n_list))?;
    let out = a.out.clone().unwrap_or_else(|| {
        let dir = if bank_path.is_dir() { bank_path.clone() } else { bank_path.parent().unwrap_or(Path::new(".")).to_path_buf() };
        dir.join("ivf")
    });
    ivf.save(&out).map_err(|e| CliError::from(e).at(&out))?;

    let queries: Vec<EmbeddingVector> = match &a.queries {
        Some(path) => {
            let m = load_embeddings(path)?;
            m.rows().map(normalize).collect::<Result<_, _>>().map_err(|e| CliError::from(e).at(path))?
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let n = a.recall_samples.min(rows.count());
            let mut picked = sample(&mut rng, rows.count(), n).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| rows.row_vector(i)).collect()
        }
    };
    let k = a.recall_k.max(1);
    let mut total = 0.0;
    for q in &queries {
        total += recall(&ivf.search(q, rows, k)?, &topk_exact(q, rows, k)?);
    }
    let report = RecallReport {
        index: out.display().to_string(),
        n_list,
        n_probe: ivf.n_probe(),
        queries: queries.len(),
        k,
        recall: if queries.is_empty() { 1.0 } else { total / queries.len() as f64 },
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(report)
}
