use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use zcbm_core::bank::ConceptBank;
use zcbm_core::pipeline::{ClassLabel, ClassSet};
use zcbm_core::vecstore::{normalize, save_matrix, EmbeddingMatrix, EmbeddingVector};

use crate::HashEmbedder;

pub const FIXTURE_DIM: usize = 64;
pub const FIXTURE_BASIS: usize = 64;
pub const FIXTURE_DISTRACTORS: usize = 936;
pub const FIXTURE_CLASSES: usize = 10;
const CONCEPTS_PER_SAMPLE: usize = 3;

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// `n` Gaussian directions scaled to unit norm.
pub fn random_unit_rows(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> EmbeddingMatrix {
    let rows: Vec<Vec<f32>> = (0..n).map(|_| gaussian(rng, dim)).collect();
    EmbeddingMatrix::from_rows_normalized(dim, &rows).unwrap()
}

/// Unit rows scattered around `clusters` random centers with Gaussian `spread`.
pub fn clustered_rows(n: usize, dim: usize, clusters: usize, spread: f32, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = random_unit_rows(clusters.max(1), dim, &mut rng);
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = centers.row(rng.random_range(0..centers.count()));
        let row: Vec<f32> = c
            .iter()
            .map(|&v| v + spread * Distribution::<f32>::sample(&StandardNormal, &mut rng) / (dim as f32).sqrt())
            .collect();
        data.extend_from_slice(normalize(&row).unwrap().values());
    }
    EmbeddingMatrix::new(dim, data, true).unwrap()
}

/// Rows of a random orthogonal matrix.
fn orthonormal_rows(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    (0..n).map(|j| q.column(j).iter().map(|&v| v as f32).collect()).collect()
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub x: EmbeddingVector,
    pub label: u32,
    /// Bank rows of the generating concepts.
    pub concepts: [usize; CONCEPTS_PER_SAMPLE],
    /// Mixing weights after `x` was scaled to unit norm.
    pub weights: [f64; CONCEPTS_PER_SAMPLE],
}

/// 64 orthonormal concepts followed by 936 random distractors. Class `c` is
/// the normalized sum of concepts `3c`, `3c+1`, `3c+2`; every sample mixes the
/// three concepts of its class with weights drawn from [0.3, 1].
#[derive(Debug, Clone)]
pub struct OrthoFixture {
    pub bank: ConceptBank,
    pub classes: ClassSet,
    pub samples: Vec<Sample>,
}

impl OrthoFixture {
    pub fn class_concepts(label: u32) -> [usize; CONCEPTS_PER_SAMPLE] {
        let b = CONCEPTS_PER_SAMPLE * label as usize;
        [b, b + 1, b + 2]
    }

    pub fn inputs(&self) -> EmbeddingMatrix {
        let rows: Vec<&[f32]> = self.samples.iter().map(|s| s.x.values()).collect();
        EmbeddingMatrix::new(FIXTURE_DIM, rows.concat(), true).unwrap()
    }

    pub fn truths(&self) -> Vec<u32> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// The generating concepts of a sample with their bank embeddings.
    pub fn true_concepts(&self, s: &Sample) -> Vec<(String, EmbeddingVector)> {
        s.concepts
            .iter()
            .map(|&i| (self.bank.concept(i).to_string(), self.bank.embeddings().row_vector(i)))
            .collect()
    }

    /// An embedder that answers bank concepts and class prompts with the
    /// fixture's own vectors and hashes everything else.
    pub fn embedder(&self) -> HashEmbedder {
        let mut e = HashEmbedder::new(FIXTURE_DIM);
        for (i, text) in self.bank.vocab().iter().enumerate() {
            e.insert(text, self.bank.embeddings().row(i).to_vec());
        }
        for (i, l) in self.classes.labels().iter().enumerate() {
            e.insert(&l.prompt_text(), self.classes.embeddings().row(i).to_vec());
        }
        e
    }
}

pub fn ortho_fixture(seed: u64, n_samples: usize) -> OrthoFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = orthonormal_rows(FIXTURE_BASIS, FIXTURE_DIM, &mut rng);
    let distractors = random_unit_rows(FIXTURE_DISTRACTORS, FIXTURE_DIM, &mut rng);
    let mut rows: Vec<Vec<f32>> = basis.clone();
    rows.extend(distractors.rows().map(|r| r.to_vec()));
    let mut vocab: Vec<String> = (0..FIXTURE_BASIS).map(|i| format!("concept {i:02}")).collect();
    vocab.extend((0..FIXTURE_DISTRACTORS).map(|i| format!("distractor {i:03}")));
    let bank = ConceptBank::from_parts(
        "ortho-fixture",
        vocab,
        EmbeddingMatrix::from_rows_normalized(FIXTURE_DIM, &rows).unwrap(),
    )
    .unwrap();

    let mut labels = Vec::new();
    let mut protos = Vec::new();
    for c in 0..FIXTURE_CLASSES as u32 {
        labels.push(ClassLabel::new(c, &format!("class {c}")));
        let mut p = vec![0f64; FIXTURE_DIM];
        for j in OrthoFixture::class_concepts(c) {
            for (a, &v) in p.iter_mut().zip(bank.embeddings().row(j)) {
                *a += v as f64;
            }
        }
        protos.push(p.iter().map(|&v| v as f32).collect::<Vec<f32>>());
    }
    let classes = ClassSet::new(labels, EmbeddingMatrix::from_rows_normalized(FIXTURE_DIM, &protos).unwrap()).unwrap();

    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let label = rng.random_range(0..FIXTURE_CLASSES as u32);
        let concepts = OrthoFixture::class_concepts(label);
        let raw: [f64; CONCEPTS_PER_SAMPLE] = std::array::from_fn(|_| rng.random_range(0.3..=1.0));
        let scale = raw.iter().map(|a| a * a).sum::<f64>().sqrt();
        let weights = raw.map(|a| a / scale);
        let mut x = vec![0f64; FIXTURE_DIM];
        for (&j, &w) in concepts.iter().zip(&weights) {
            for (a, &v) in x.iter_mut().zip(bank.embeddings().row(j)) {
                *a += w * v as f64;
            }
        }
        let x: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        samples.push(Sample {
            x: normalize(&x).unwrap(),
            label,
            concepts,
            weights,
        });
    }
    OrthoFixture { bank, classes, samples }
}

/// Eight standard basis concepts, `x = 0.6 e0 + 0.8 e1`, and one class per
/// basis direction of `x`.
#[derive(Debug, Clone)]
pub struct PairFixture {
    pub bank: ConceptBank,
    pub classes: ClassSet,
    pub x: EmbeddingVector,
}

pub fn pair_fixture() -> PairFixture {
    let dim = 8;
    let rows: Vec<Vec<f32>> = (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let vocab = (0..dim).map(|i| format!("basis {i}")).collect();
    let bank = ConceptBank::from_parts("pair-fixture", vocab, EmbeddingMatrix::from_rows_normalized(dim, &rows).unwrap())
        .unwrap();
    let classes = ClassSet::new(
        vec![ClassLabel::new(0, "first"), ClassLabel::new(1, "second")],
        EmbeddingMatrix::from_rows_normalized(dim, &rows[..2]).unwrap(),
    )
    .unwrap();
    let mut x = vec![0f32; dim];
    x[0] = 0.6;
    x[1] = 0.8;
    PairFixture {
        bank,
        classes,
        x: normalize(&x).unwrap(),
    }
}

/// Paths written by [`write_fixture`].
#[derive(Debug, Clone)]
pub struct FixtureFiles {
    pub bank: PathBuf,
    pub classes: PathBuf,
    pub class_embeddings: PathBuf,
    pub inputs: PathBuf,
    /// One label id per line.
    pub truth: PathBuf,
    /// One JSON array of concept strings per line.
    pub insertion_gt: PathBuf,
}

/// Persists a bank, class set and inputs in the on-disk formats the CLI reads.
pub fn write_fixture(
    dir: &Path,
    bank: &ConceptBank,
    classes: &ClassSet,
    inputs: &EmbeddingMatrix,
    truths: &[u32],
    gt: &[Vec<String>],
) -> FixtureFiles {
    std::fs::create_dir_all(dir).unwrap();
    let files = FixtureFiles {
        bank: dir.join("bank"),
        classes: dir.join("classes.json"),
        class_embeddings: dir.join("classes.zcbm"),
        inputs: dir.join("inputs.zcbm"),
        truth: dir.join("truth.txt"),
        insertion_gt: dir.join("insertion_gt.jsonl"),
    };
    bank.save(&files.bank).unwrap();
    std::fs::write(&files.classes, serde_json::to_string_pretty(classes.labels()).unwrap()).unwrap();
    save_matrix(classes.embeddings(), &files.class_embeddings).unwrap();
    save_matrix(inputs, &files.inputs).unwrap();
    let mut t = std::fs::File::create(&files.truth).unwrap();
    for l in truths {
        writeln!(t, "{l}").unwrap();
    }
    let mut g = std::fs::File::create(&files.insertion_gt).unwrap();
    for row in gt {
        writeln!(g, "{}", serde_json::to_string(row).unwrap()).unwrap();
    }
    files
}
