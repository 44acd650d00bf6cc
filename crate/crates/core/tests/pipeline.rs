//! End-to-end: generate, persist, train, evaluate, ablate.

use swca::eval::{ablate_alpha, embed_split, evaluate_pools, PoolSelection, RetrievalReport};
use swca::train::{metrics_from_jsonl, metrics_to_jsonl, train, train_from};
use swca::{checkpoint, data, DataGenConfig, Dataset, LossMode, TrainConfig};

fn small() -> (Dataset, TrainConfig) {
    let ds = data::generate(&DataGenConfig {
        train_samples: 96,
        val_samples: 24,
        test_samples: 64,
        ..DataGenConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        ..TrainConfig::default()
    };
    (ds, cfg)
}

fn test_reports(ds: &Dataset, cfg: &TrainConfig, pools: &[usize]) -> Vec<RetrievalReport> {
    let out = train(ds, cfg).unwrap();
    let (v, t) = embed_split(&out.params, &ds.test).unwrap();
    evaluate_pools(&v, &t, out.params.log_tau, pools, PoolSelection::First).unwrap()
}

#[test]
fn ablation_endpoints_match_single_term_modes() {
    let (ds, base) = small();
    let tables = ablate_alpha(&ds, &base, &[0.0, 1.0], &[32, 64], PoolSelection::First).unwrap();
    for (mode, row) in [(LossMode::SwcaKnowledge, 0), (LossMode::SwcaSpatial, 1)] {
        let mut cfg = base.clone();
        cfg.objective.loss_mode = mode;
        let direct = test_reports(&ds, &cfg, &[32, 64]);
        for (table, pair) in tables.iter().zip(direct.chunks_exact(2)) {
            let (_, v2t, t2v) = &table.rows[row];
            assert_eq!(v2t, &pair[0], "{mode} pool {}", table.pool);
            assert_eq!(t2v, &pair[1], "{mode} pool {}", table.pool);
        }
    }
}

#[test]
fn single_alpha_matches_direct_run_and_reruns_agree() {
    let (ds, base) = small();
    let tables = ablate_alpha(&ds, &base, &[0.5], &[64], PoolSelection::First).unwrap();
    assert_eq!(tables[0].rows.len(), 1);
    let mut cfg = base.clone();
    cfg.objective.loss_mode = LossMode::SwcaFull;
    cfg.objective.mix.alpha = 0.5;
    let direct = test_reports(&ds, &cfg, &[64]);
    assert_eq!(tables[0].rows[0].1, direct[0]);
    assert_eq!(tables[0].rows[0].2, direct[1]);

    let grid = [0.3, 0.4, 0.5, 0.6];
    let a = ablate_alpha(&ds, &base, &grid, &[64], PoolSelection::First).unwrap();
    let b = ablate_alpha(&ds, &base, &grid, &[64], PoolSelection::First).unwrap();
    assert_eq!(a[0].to_csv(), b[0].to_csv());
    assert_eq!(a[0].to_csv().lines().count(), 5);
}

#[test]
fn persisted_artifacts_reproduce_in_memory_results() {
    let (ds, cfg) = small();
    let dir = tempfile::tempdir().unwrap();
    let dpath = dir.path().join("d.bin");
    data::save(&ds, &dpath).unwrap();
    let loaded = data::load(&dpath).unwrap();
    assert_eq!(loaded, ds);

    let a = train(&ds, &cfg).unwrap();
    let b = train(&loaded, &cfg).unwrap();
    assert_eq!(metrics_to_jsonl(&a.metrics), metrics_to_jsonl(&b.metrics));
    assert_eq!(metrics_from_jsonl(&metrics_to_jsonl(&a.metrics)).unwrap(), a.metrics);

    let cpath = dir.path().join("c.bin");
    checkpoint::save(&a.params, &cpath).unwrap();
    let params = checkpoint::load(&cpath).unwrap();
    assert_eq!(params, a.params);
    let (v, t) = embed_split(&params, &ds.test).unwrap();
    let (v0, t0) = embed_split(&a.params, &ds.test).unwrap();
    assert_eq!(v, v0);
    assert_eq!(t, t0);

    // continuing from the reloaded checkpoint gives the same log as continuing in memory
    let next = TrainConfig { seed: 1, ..cfg.clone() };
    let from_disk = train_from(params, &ds, &next).unwrap();
    let from_memory = train_from(a.params.clone(), &ds, &next).unwrap();
    assert_eq!(
        metrics_to_jsonl(&from_disk.metrics),
        metrics_to_jsonl(&from_memory.metrics)
    );
}

#[test]
fn default_full_run_beats_chance_on_validation() {
    let ds = data::generate(&DataGenConfig::default()).unwrap();
    let out = train(&ds, &TrainConfig::default()).unwrap();
    let last = out.metrics.last().unwrap();
    let chance = 100.0 / ds.val.len() as f64;
    assert!(
        last.r1_v2t.unwrap() > chance && last.r1_t2v.unwrap() > chance,
        "{last:?}"
    );
}

#[test]
fn soft_weighting_learns_beyond_chance() {
    let (ds, mut cfg) = small();
    cfg.epochs = 10;
    let reports = test_reports(&ds, &cfg, &[64]);
    // chance R@10 on 64 candidates is about 15.6
    assert!(reports[0].recall(10).unwrap() > 40.0, "{:?}", reports[0]);
}
