mod common;

use lrcalib::harness::ablation::{self, parse_grid};
use lrcalib::harness::{
    self, base_train, evaluate, generate_world, EmpiricalWorld, ExperimentConfig, FineTuneSession, World,
};
use lrcalib::geometry::FeatureVector;
use lrcalib::memory_bank::ClassId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.world.dim = 8;
    c.world.base_classes = 6;
    c.world.novel_classes = 3;
    c.base_steps = 400;
    c.warmup_steps = 100;
    c.finetune_steps = 80;
    c.batch_size = 16;
    c.bank_capacity = 1024;
    c.n_test = 100;
    c.seeds = vec![1, 2, 3];
    c
}

fn synthetic(c: &ExperimentConfig, seed: u64) -> World {
    World::Synthetic(generate_world(c, seed).unwrap())
}

#[test]
fn base_classifier_separates_distant_classes() {
    let mut c = ExperimentConfig::default();
    c.world.spread = 0.2;
    c.base_steps = 800;
    c.warmup_steps = 200;
    // 67 per class over 15 base classes is just over 1000 held-out samples
    c.n_test = 67;
    let w = synthetic(&c, 11);
    let a = base_train(&w, &c, 11).unwrap();
    let acc = evaluate(&a.head, &w, c.n_test, 11).unwrap();
    assert!(acc.base_total >= 1000);
    assert!(acc.base >= 0.95, "base accuracy {}", acc.base);
}

#[test]
fn converter_objective_falls_during_base_training() {
    let c = small_config();
    let mut early = 0.0;
    let mut late = 0.0;
    for seed in 1..=5 {
        let a = base_train(&synthetic(&c, seed), &c, seed).unwrap();
        let n = a.ifc_curve.len();
        assert_eq!(n, c.base_steps - c.warmup_steps);
        early += a.ifc_curve[..20].iter().sum::<f64>() / 20.0;
        late += a.ifc_curve[n - 20..].iter().sum::<f64>() / 20.0;
    }
    assert!(late < early, "late {late} early {early}");
}

#[test]
fn indistinguishable_classes_score_chance() {
    let (dim, classes, per_class) = (6, 5, 400);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut draw = || -> Vec<FeatureVector> {
        (0..per_class)
            .map(|_| FeatureVector::new((0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap())
            .collect()
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for _ in 0..classes {
        train.push(draw());
        test.push(draw());
    }
    let w = World::Empirical(EmpiricalWorld {
        dim,
        num_base: 4,
        num_novel: 1,
        train,
        test,
    });
    let mut c = small_config();
    c.world.dim = dim;
    c.n_test = 400;
    c.seeds = vec![5];
    let a = base_train(&w, &c, 5).unwrap();
    let out = harness::fine_tune(&a, &w, &c, 5).unwrap();
    let acc = evaluate(&out.head, &w, c.n_test, 5).unwrap();
    let n = (classes * c.n_test) as f64;
    let k = classes as f64;
    let band = 3.0 * (k - 1.0).sqrt() / (k * n.sqrt());
    assert!((acc.overall - 1.0 / k).abs() <= band, "accuracy {} outside 0.2 +- {band}", acc.overall);
}

#[test]
fn single_cell_grid_reproduces_single_run() {
    let mut c = small_config();
    c.k_shot = 2;
    let grid = parse_grid("shots=2").unwrap();
    let report = ablation::run_ablation(
        &c,
        &grid,
        |s| Ok(synthetic(&c, s)),
        |s, w| base_train(w, &c, s),
    )
    .unwrap();
    assert_eq!(report.cells.len(), 1);
    let cell = &report.cells[0];
    for seed_acc in &cell.per_seed {
        let w = synthetic(&c, seed_acc.seed);
        let a = base_train(&w, &c, seed_acc.seed).unwrap();
        let r = harness::run_seed(&w, &a, &c, seed_acc.seed).unwrap();
        assert_eq!(r.accuracy, seed_acc.accuracy);
    }
    let novel: Vec<f64> = cell.per_seed.iter().map(|s| s.accuracy.novel).collect();
    assert_eq!(cell.novel, harness::mean_std(&novel));
}

#[test]
fn calibration_reports_match_recomputation() {
    let mut c = small_config();
    c.world.base_classes = 2;
    c.world.novel_classes = 2;
    c.base_steps = 150;
    c.warmup_steps = 50;
    c.k_similar = 2;
    for seed in 0..50u64 {
        let w = synthetic(&c, seed);
        let a = base_train(&w, &c, seed).unwrap();
        let session = FineTuneSession::new(&a, &w, &c, seed).unwrap();
        let base = w.base_classes();
        let base_means: Vec<Vec<f64>> = base
            .iter()
            .map(|&b| common::mean(&session.bank().class_pool(b).iter().map(|v| v.to_vec()).collect::<Vec<_>>()))
            .collect();
        for (report, spec) in session.calibration().iter().zip(session.gaussian_specs()) {
            let shots: Vec<Vec<f64>> = session
                .balanced_set()
                .iter()
                .filter(|(k, _)| *k == report.class)
                .map(|(_, x)| x.to_vec())
                .collect();
            let mut all = shots.clone();
            for s in &shots {
                let mut x = s.clone();
                for _ in 0..c.lrsample_count {
                    x = common::ifc_forward(&a.ifc, &x);
                    all.push(x.clone());
                }
            }
            let before = common::mean(&shots);
            let after = common::mean(&all);
            let (nearest, dist_after) = base_means
                .iter()
                .enumerate()
                .map(|(i, m)| (i, common::unit_distance(&after, m)))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
            assert_eq!(report.similar_base, base[nearest], "seed {seed}");
            assert!(common::euclid(&report.center_before, &before) < 1e-9);
            assert!(common::euclid(&report.center_after, &after) < 1e-9);
            assert!((report.dist_to_similar_after - dist_after).abs() < 1e-9);
            let dist_before = common::unit_distance(&before, &base_means[nearest]);
            assert!((report.dist_to_similar_before - dist_before).abs() < 1e-9);

            // both base classes are the two nearest, so the spec variance is their average
            let var = |b: ClassId| -> Vec<f64> {
                let rows: Vec<Vec<f64>> = a.bank.class_pool(b).iter().map(|v| v.to_vec()).collect();
                let m = common::mean(&rows);
                (0..m.len())
                    .map(|j| rows.iter().map(|r| (r[j] - m[j]).powi(2)).sum::<f64>() / rows.len() as f64)
                    .collect()
            };
            let (v0, v1) = (var(base[0]), var(base[1]));
            for j in 0..spec.sigma2.len() {
                assert!((spec.sigma2[j] - (v0[j] + v1[j]) / 2.0).abs() < 1e-9);
            }
            assert_eq!(spec.mu, report.center_after);
        }
    }
}

#[test]
fn aggregate_recomputes_from_seed_entries() {
    let c = small_config();
    let results: Vec<_> = c
        .seeds
        .iter()
        .map(|&s| {
            let w = synthetic(&c, s);
            let a = base_train(&w, &c, s).unwrap();
            harness::run_seed(&w, &a, &c, s).unwrap()
        })
        .collect();
    let agg = harness::aggregate(&results);
    assert_eq!(agg.seeds, 3);
    let novel: Vec<f64> = results.iter().map(|r| r.accuracy.novel).collect();
    let m = novel.iter().sum::<f64>() / 3.0;
    let sd = (novel.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 2.0).sqrt();
    assert!((agg.novel.mean - m).abs() < 1e-12);
    assert!((agg.novel.std - sd).abs() < 1e-12);
    for summary in &agg.calibration {
        let rows: Vec<_> = results
            .iter()
            .flat_map(|r| r.calibration.iter().filter(|row| row.class == summary.class))
            .collect();
        assert_eq!(summary.seeds, rows.len());
        let with = rows.iter().map(|r| r.dist_with).sum::<f64>() / rows.len() as f64;
        assert!((summary.dist_with.mean - with).abs() < 1e-12);
        assert_eq!(summary.increased, rows.iter().filter(|r| r.dist_with > r.dist_without).count());
    }
    for r in &results {
        assert_eq!(r.accuracy.novel_total, c.world.novel_classes * c.n_test);
        assert_eq!(r.curves.finetune.len(), c.finetune_steps);
    }
}
