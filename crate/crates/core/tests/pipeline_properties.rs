use std::sync::Arc;
use std::thread;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zcbm_core::bank::ConceptBank;
use zcbm_core::pipeline::{
    zero_shot_baseline, ClassLabel, ClassSet, DeletionOrder, EditOp, Engine, InterventionSession, Prediction,
    SessionStore,
};
use zcbm_core::regress::{least_squares, RegressionProblem, SolverConfig};
use zcbm_core::retrieval::Retriever;
use zcbm_core::vecstore::{normalize, EmbeddingMatrix, EmbeddingVector};
use zcbm_testkit::{ortho_fixture, pair_fixture, random_unit_rows, HashEmbedder, OrthoFixture};

fn fixture_engine(f: &OrthoFixture) -> Engine {
    Engine::new(f.bank.clone(), f.classes.clone(), Retriever::Exact).unwrap()
}

fn residual(p: &Prediction) -> f64 {
    p.input
        .values()
        .iter()
        .zip(p.reconstructed.values())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum()
}

fn random_engine(seed: u64, n: usize, dim: usize, classes: usize) -> Engine {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = random_unit_rows(n, dim, &mut rng);
    let vocab = (0..n).map(|i| format!("c{i}")).collect();
    let bank = ConceptBank::from_parts("random", vocab, rows).unwrap();
    let labels = (0..classes as u32).map(|c| ClassLabel::new(c, &format!("class {c}"))).collect();
    let classes = ClassSet::new(labels, random_unit_rows(classes, dim, &mut rng)).unwrap();
    Engine::new(bank, classes, Retriever::Exact).unwrap()
}

fn random_input(seed: u64, dim: usize) -> EmbeddingVector {
    random_unit_rows(1, dim, &mut ChaCha8Rng::seed_from_u64(seed)).row_vector(0)
}

/// Lasso on a fixed support with fixed signs:
/// `(F_S^T F_S) w = F_S^T y - (lambda / 2) sign`.
fn active_set_oracle(rows: &[&[f32]], y: &[f32], lambda: f64, signs: &[f64]) -> Vec<f64> {
    let d = y.len();
    let f = DMatrix::from_fn(d, rows.len(), |i, j| rows[j][i] as f64);
    let y = DVector::from_iterator(d, y.iter().map(|&v| v as f64));
    let rhs = f.transpose() * y - DVector::from_column_slice(signs) * (lambda / 2.0);
    let w = (f.transpose() * &f).cholesky().unwrap().solve(&rhs);
    w.iter().copied().collect()
}

#[test]
fn fixture_recovers_generating_concepts() {
    let f = ortho_fixture(5, 40);
    let engine = fixture_engine(&f);
    let lambda = 1e-4;
    let solver = SolverConfig::lasso(lambda);
    for s in &f.samples {
        let p = engine.infer(&s.x, 100, &solver).unwrap();
        assert_eq!(p.label_id, s.label);
        assert!(p.weights.converged);
        let rows: Vec<&[f32]> = s.concepts.iter().map(|&i| f.bank.embeddings().row(i)).collect();
        let oracle = active_set_oracle(&rows, s.x.values(), lambda, &[1.0; 3]);
        for (&i, &w) in s.concepts.iter().zip(&oracle) {
            let got = p.concepts.iter().find(|c| c.bank_index == Some(i)).expect("true concept missing");
            assert!((got.weight - w).abs() < 1e-6, "{} vs {w}", got.weight);
        }
        for (&i, &w) in s.concepts.iter().zip(&s.weights) {
            let got = p.concepts.iter().find(|c| c.bank_index == Some(i)).unwrap();
            assert!((got.weight - w).abs() <= 0.02);
        }
    }
}

#[test]
fn pair_fixture_weights() {
    let f = pair_fixture();
    let p = zcbm_core::pipeline::infer(&f.x, &f.bank, &f.classes, 4, &SolverConfig::lasso(1e-6)).unwrap();
    assert_eq!(p.concepts.len(), 2);
    assert_eq!(p.concepts[0].text, "basis 1");
    assert!((p.concepts[0].weight - 0.8).abs() < 0.01);
    assert!((p.concepts[1].weight - 0.6).abs() < 0.01);
    assert!(residual(&p).sqrt() < 0.02);
    assert_eq!(p.label_id, 1);
}

#[test]
fn input_in_bank_dominates() {
    let dim = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_unit_rows(1, dim, &mut rng);
    let mut rows = x.clone();
    rows.append(&random_unit_rows(200, dim, &mut rng)).unwrap();
    let vocab = (0..rows.count()).map(|i| format!("c{i}")).collect();
    let bank = ConceptBank::from_parts("b", vocab, rows).unwrap();
    let classes = ClassSet::new(vec![ClassLabel::new(0, "only")], x.clone()).unwrap();
    let p = zcbm_core::pipeline::infer(&x.row_vector(0), &bank, &classes, 50, &SolverConfig::lasso(1e-5)).unwrap();
    assert_eq!(p.concepts[0].bank_index, Some(0));
    let cos = zcbm_core::vecstore::cosine(&p.reconstructed, &x.row_vector(0)).unwrap();
    assert!(cos > 0.999, "{cos}");
}

#[test]
fn descending_deletion_dominates_ascending() {
    let f = ortho_fixture(6, 60);
    let engine = fixture_engine(&f);
    let solver = SolverConfig::lasso(1e-4);
    for s in &f.samples {
        let p = engine.infer(&s.x, 100, &solver).unwrap();
        let n = p.concepts.len();
        for m in 0..=n {
            let ratio = m as f64 / n as f64;
            let desc = residual(&engine.intervene_delete(&p, DeletionOrder::Descending, ratio).unwrap());
            let asc = residual(&engine.intervene_delete(&p, DeletionOrder::Ascending, ratio).unwrap());
            assert!(desc >= asc - 1e-9, "m={m}: {desc} < {asc}");
        }
    }
}

#[test]
fn deletion_endpoints() {
    let f = ortho_fixture(7, 10);
    let engine = fixture_engine(&f);
    let p = engine.infer(&f.samples[0].x, 100, &SolverConfig::lasso(1e-4)).unwrap();
    for order in [DeletionOrder::Ascending, DeletionOrder::Descending, DeletionOrder::Random(3)] {
        assert_eq!(engine.intervene_delete(&p, order, 0.0).unwrap(), p);
        let all = engine.intervene_delete(&p, order, 1.0).unwrap();
        assert!(all.fallback);
        assert_eq!(all.weights.nonzero_count, 0);
    }
}

#[test]
fn inserting_input_itself_reconstructs_it() {
    let engine = random_engine(4, 300, 24, 3);
    let x = random_input(99, 24);
    let p = engine.infer(&x, 3, &SolverConfig::lasso(1e-2)).unwrap();
    let q = engine.intervene_insert(&p, &[("the input".into(), x.clone())]).unwrap();
    let cos = zcbm_core::vecstore::cosine(&q.reconstructed, &x).unwrap();
    assert!(cos > 0.999, "{cos}");
    assert!(residual(&q) <= residual(&p) + 1e-8);
}

#[test]
fn corrupted_prediction_is_repaired_by_true_concepts() {
    let f = ortho_fixture(9, 30);
    let engine = fixture_engine(&f);
    let solver = SolverConfig::lasso(1e-4);
    for (i, s) in f.samples.iter().enumerate() {
        let other = f.samples.iter().cycle().skip(i + 1).find(|o| o.label != s.label).unwrap();
        let mut p = engine.infer(&other.x, 100, &solver).unwrap();
        p.input = s.x.clone();
        let q = engine.intervene_insert(&p, &f.true_concepts(s)).unwrap();
        assert!(residual(&q) < 1e-6);
        assert_eq!(q.label_id, s.label);
    }
}

#[test]
fn session_matches_direct_interventions() {
    let f = ortho_fixture(10, 5);
    let engine = fixture_engine(&f);
    let solver = SolverConfig::lasso(1e-4);
    let s = &f.samples[0];
    let p = engine.infer(&s.x, 100, &solver).unwrap();
    let mut session = InterventionSession::new(p.clone(), 100, solver);
    assert_eq!(session.recompute(&engine).unwrap(), &p);
    session.apply_edit(&engine, EditOp::Delete { index: 0 }, None).unwrap();
    let direct = engine.intervene_delete(&p, DeletionOrder::Descending, 1.0 / p.concepts.len() as f64).unwrap();
    assert_eq!(session.recompute(&engine).unwrap(), &direct);

    let embedder = f.embedder();
    let text = session.concepts[0].candidate.text.clone();
    session.apply_edit(&engine, EditOp::Insert { concept: text }, Some(&embedder)).unwrap();
    let refit = session.recompute(&engine).unwrap().clone();
    assert!(residual(&refit) < 1e-6);
    assert_eq!(session.history.len(), 2);
}

#[test]
fn session_insert_fetches_unknown_text() {
    let f = ortho_fixture(10, 1);
    let engine = fixture_engine(&f);
    let p = engine.infer(&f.samples[0].x, 100, &SolverConfig::lasso(1e-4)).unwrap();
    let mut session = InterventionSession::new(p, 100, SolverConfig::lasso(1e-4));
    let embedder = HashEmbedder::new(64).with("a striped tail", f.samples[0].x.values().to_vec());
    session
        .apply_edit(&engine, EditOp::Insert { concept: "a striped tail".into() }, Some(&embedder))
        .unwrap();
    let q = session.recompute(&engine).unwrap();
    assert!(residual(q) < 1e-10);
    let wrong_dim = HashEmbedder::new(8);
    assert!(session
        .apply_edit(&engine, EditOp::Insert { concept: "elsewhere".into() }, Some(&wrong_dim))
        .is_err());
    assert_eq!(session.history.len(), 1);
}

#[test]
fn concurrent_edits_are_serialized() {
    let f = ortho_fixture(11, 1);
    let engine = Arc::new(fixture_engine(&f));
    let p = engine.infer(&f.samples[0].x, 100, &SolverConfig::lasso(1e-4)).unwrap();
    let store = Arc::new(SessionStore::default());
    let id = store.insert(InterventionSession::new(p, 100, SolverConfig::lasso(1e-4))).lock().unwrap().session_id.clone();
    let handles: Vec<_> = (0..2)
        .map(|t| {
            let (store, engine, id) = (store.clone(), engine.clone(), id.clone());
            thread::spawn(move || {
                for _ in 0..25 {
                    let s = store.get(&id).unwrap();
                    let mut s = s.lock().unwrap();
                    let op = if t == 0 { EditOp::Delete { index: 0 } } else { EditOp::Restore { index: 0 } };
                    s.apply_edit(&engine, op, None).unwrap();
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let s = store.get(&id).unwrap();
    let s = s.lock().unwrap();
    assert_eq!(s.history.len(), 50);
    assert!(s.history.iter().enumerate().all(|(i, h)| h.seq == i));
}

#[test]
fn inference_is_deterministic() {
    let f = ortho_fixture(12, 20);
    let engine = fixture_engine(&f);
    let solver = SolverConfig::lasso(1e-5);
    let a = engine.infer_batch(&f.inputs(), 128, &solver).unwrap();
    let b = engine.infer_batch(&f.inputs(), 128, &solver).unwrap();
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
}

#[test]
fn calibration_on_fixture() {
    let f = ortho_fixture(13, 8);
    let engine = fixture_engine(&f);
    let xs: Vec<EmbeddingVector> = f.samples.iter().map(|s| s.x.clone()).collect();
    let grid = [2.0, 1e-2, 1e-4];
    let c = engine.calibrate_lambda(&xs, 100, &grid, 0.02, &SolverConfig::lasso(1e-5)).unwrap();
    let ratios: Vec<f64> = c.points.iter().map(|p| p.mean_nonzero_ratio).collect();
    // lambda = 2 sits in the dead zone; below it exactly the three generating concepts survive
    assert_eq!(ratios, [0.0, 0.03, 0.03]);
    assert_eq!((c.lambda, c.no_qualifier), (1e-2, false));
    let none = engine.calibrate_lambda(&xs, 100, &grid, 0.5, &SolverConfig::lasso(1e-5)).unwrap();
    assert_eq!((none.lambda, none.no_qualifier), (1e-4, true));
}

fn lstsq_residual(cols: &[Vec<f32>], y: &EmbeddingVector) -> f64 {
    let design = EmbeddingMatrix::new(y.dim(), cols.concat(), false).unwrap();
    let p = RegressionProblem::new(&design, y).unwrap();
    let w = least_squares(&p);
    p.squared_error(&w.w)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn label_is_zero_shot_of_reconstruction(seed in any::<u64>(), k in 1usize..80, lambda_exp in -6.0f64..-1.0) {
        let engine = random_engine(seed, 200, 16, 5);
        let x = random_input(seed ^ 0xabc, 16);
        let p = engine.infer(&x, k, &SolverConfig::lasso(10f64.powf(lambda_exp))).unwrap();
        let target = if p.fallback { &p.input } else { &p.reconstructed };
        prop_assert_eq!(zero_shot_baseline(target, engine.classes()).unwrap().label_id, p.label_id);
        prop_assert_eq!(p.concepts.len(), p.weights.nonzero_count);
        for w in p.concepts.windows(2) {
            prop_assert!(w[0].weight.abs() >= w[1].weight.abs());
        }
    }

    #[test]
    fn reconstruction_lies_in_retrieved_span(seed in any::<u64>(), k in 1usize..40) {
        let engine = random_engine(seed, 150, 48, 3);
        let x = random_input(seed ^ 0x5eed, 48);
        let p = engine.infer(&x, k, &SolverConfig::lasso(1e-4)).unwrap();
        let rows: Vec<&[f32]> = p.retrieval.indices.iter().map(|&i| engine.bank().embeddings().row(i)).collect();
        let f = DMatrix::from_fn(48, rows.len(), |i, j| rows[j][i] as f64);
        let r = DVector::from_iterator(48, p.reconstructed.values().iter().map(|&v| v as f64));
        let coef = f.clone().svd(true, true).solve(&r, 1e-12).unwrap();
        let off = (&f * coef - &r).norm();
        prop_assert!(off < 1e-6, "{}", off);
        let mut recomputed = vec![0f64; 48];
        for (c, &w) in p.candidates.iter().zip(&p.weights.w) {
            for (a, &v) in recomputed.iter_mut().zip(engine.bank().embeddings().row(c.bank_index.unwrap())) {
                *a += w * v as f64;
            }
        }
        for (a, &b) in recomputed.iter().zip(p.reconstructed.values()) {
            prop_assert!((a - b as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn adding_columns_never_increases_residual(seed in any::<u64>(), dim in 2usize..24, k in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols = random_unit_rows(k, dim, &mut rng);
        let cols: Vec<Vec<f32>> = cols.rows().map(|r| r.to_vec()).collect();
        let y = normalize(&(0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>()).unwrap();
        let mut prev = f64::INFINITY;
        for m in 1..=k {
            let r = lstsq_residual(&cols[..m], &y);
            prop_assert!(r <= prev + 1e-8, "m={} {} > {}", m, r, prev);
            prev = r;
        }
    }
}
