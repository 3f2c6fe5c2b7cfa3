use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zcbm_core::bank::ConceptBank;
use zcbm_core::metrics::{
    clip_score, concept_coverage, deletion_curve, evaluate, inner_redundancy, insertion_curve, modality_gap, sparsity,
    top1_accuracy, write_deletion_csv, write_insertion_csv, Scorer,
};
use zcbm_core::pipeline::{DeletionOrder, Engine};
use zcbm_core::regress::SolverConfig;
use zcbm_core::retrieval::Retriever;
use zcbm_core::vecstore::EmbeddingMatrix;
use zcbm_testkit::{ortho_fixture, random_unit_rows};

fn set(v: &[u8]) -> Vec<String> {
    v.iter().map(|b| format!("concept {b}")).collect()
}

proptest! {
    #[test]
    fn coverage_identities(a in proptest::collection::vec(0u8..40, 1..20), extra in proptest::collection::vec(0u8..40, 0..20), r in proptest::collection::vec(0u8..40, 1..20)) {
        let a = set(&a);
        prop_assert_eq!(concept_coverage(&a, &a).unwrap(), 1.0);
        let upper: Vec<String> = a.iter().map(|s| s.to_uppercase()).collect();
        prop_assert_eq!(concept_coverage(&upper, &a).unwrap(), 1.0);
        let r = set(&r);
        let mut grown = a.clone();
        grown.extend(set(&extra));
        let small = concept_coverage(&a, &r).unwrap();
        let big = concept_coverage(&grown, &r).unwrap();
        prop_assert!(small <= big);
        prop_assert!((0.0..=1.0).contains(&big));
    }

    #[test]
    fn modality_gap_is_a_metric_on_centroids(seed in any::<u64>(), na in 1usize..20, nb in 1usize..20, nc in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_unit_rows(na, 8, &mut rng);
        let b = random_unit_rows(nb, 8, &mut rng);
        let c = random_unit_rows(nc, 8, &mut rng);
        let ab = modality_gap(&a, &b).unwrap();
        prop_assert_eq!(ab, modality_gap(&b, &a).unwrap());
        prop_assert_eq!(modality_gap(&a, &a).unwrap(), 0.0);
        let bc = modality_gap(&b, &c).unwrap();
        let ac = modality_gap(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn scores_stay_in_range(seed in any::<u64>(), n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = random_unit_rows(n, 6, &mut rng);
        let r = inner_redundancy(&rows).unwrap();
        prop_assert!((-1.0 - 1e-7..=1.0 + 1e-7).contains(&r));
    }
}

#[test]
fn identities_hold_exactly() {
    let m = EmbeddingMatrix::from_rows_normalized(3, &[[0.2f32, 0.4, 0.1], [0.2, 0.4, 0.1]]).unwrap();
    assert_eq!(inner_redundancy(&m).unwrap(), 1.0);
    assert_eq!(modality_gap(&m, &m).unwrap(), 0.0);
    let e = EmbeddingMatrix::from_rows_normalized(2, &[[1f32, 0.0]]).unwrap();
    let f = EmbeddingMatrix::from_rows_normalized(2, &[[0f32, 1.0]]).unwrap();
    assert!((modality_gap(&e, &f).unwrap() - 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn curves_and_report_on_fixture() {
    let f = ortho_fixture(21, 40);
    let engine = Engine::new(f.bank.clone(), f.classes.clone(), Retriever::Exact).unwrap();
    let preds = engine.infer_batch(&f.inputs(), 100, &SolverConfig::lasso(1e-4)).unwrap();
    let truths = f.truths();
    let baseline = top1_accuracy(&preds.iter().map(|p| p.label_id).collect::<Vec<_>>(), &truths).unwrap();
    assert_eq!(baseline, 1.0);

    let orders = [DeletionOrder::Ascending, DeletionOrder::Descending, DeletionOrder::Random(4)];
    let ratios = [0.0, 0.5, 1.0];
    let rows = deletion_curve(&engine, &preds, &truths, &orders, &ratios).unwrap();
    assert_eq!(rows.len(), 9);
    for r in rows.iter().filter(|r| r.ratio == 0.0) {
        assert_eq!(r.accuracy, baseline);
    }
    let ends: Vec<_> = rows.iter().filter(|r| r.ratio == 1.0).collect();
    assert!(ends.windows(2).all(|w| w[0].accuracy == w[1].accuracy && w[0].mean_residual == w[1].mean_residual));
    let desc = rows.iter().find(|r| r.order == "descending" && r.ratio == 0.5).unwrap();
    let asc = rows.iter().find(|r| r.order == "ascending" && r.ratio == 0.5).unwrap();
    assert!(desc.mean_residual >= asc.mean_residual);

    let gt: Vec<_> = f.samples.iter().map(|s| f.true_concepts(s)).collect();
    let ins = insertion_curve(&engine, &preds, &truths, &gt, &[0, 1, 2, 3]).unwrap();
    assert_eq!(ins[0].accuracy, baseline);
    assert!(ins.windows(2).all(|w| w[1].mean_residual <= w[0].mean_residual + 1e-8));

    let mut csv = Vec::new();
    write_deletion_csv(&rows, &mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().starts_with("order,ratio,accuracy,mean_residual\n"));
    let mut csv = Vec::new();
    write_insertion_csv(&ins, &mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().starts_with("count,accuracy,mean_residual\n"));

    let scorer = Scorer {
        images: f.inputs(),
        concepts: ConceptBank::from_parts("scorer", f.bank.vocab().to_vec(), f.bank.embeddings().clone()).unwrap(),
    };
    let report = evaluate("fixture", &preds, &truths, f.classes.embeddings(), Some(&scorer), true).unwrap();
    assert_eq!(report.n_samples, 40);
    assert_eq!(report.top1_accuracy, 1.0);
    assert!((report.mean_sparsity - 0.97).abs() < 1e-12);
    let clip = report.mean_clip_score.unwrap();
    assert!(clip > 0.0 && clip <= 1.0);
    // generating concepts are mutually orthogonal
    assert!(report.mean_inner_redundancy.unwrap().abs() < 1e-6);
    for p in &preds {
        assert!((0.0..=1.0).contains(&sparsity(&p.weights, 100)));
        let scorer_rows = f.bank.embeddings().select_rows(&p.retrieval.indices);
        let s = clip_score(&p.input, &scorer_rows, &p.weights, 10).unwrap();
        assert!((-1.0..=1.0).contains(&s));
    }
}
