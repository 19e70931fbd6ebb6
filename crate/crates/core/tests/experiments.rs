use rand::Rng;
use rll_core::data::{synthetic_dataset, SyntheticSpec};
use rll_core::experiments::*;
use rll_core::mds::{dissimilarity_matrix, LayerSelection, Metric};
use rll_core::nn::WeightSnapshot;
use rll_core::rng::rng_from;
use rll_core::trainer::{evaluate, train, OptimizerConfig, OptimizerKind};

fn bench(seed: u64, n: usize, widths: &[usize]) -> Bench {
    let (train, test) = synthetic_dataset(&SyntheticSpec {
        seed,
        n,
        test_n: n,
        dims: vec![3, 8, 8],
        classes: 10,
        separation: 0.3,
        random_labels: false,
    })
    .unwrap();
    Bench::new(train, test, widths, &ActivationChoice::Relu, seed + 7).unwrap()
}

fn same_arrays(a: &WeightSnapshot, b: &WeightSnapshot) -> bool {
    a.arrays.iter().zip(&b.arrays).all(|(x, y)| {
        x.name == y.name && x.data.iter().zip(&y.data).all(|(u, v)| u.to_bits() == v.to_bits())
    }) && a.arrays.len() == b.arrays.len()
}

/// BGD to zero training error plus a few margin epochs.
fn zero_error_model(b: &Bench) -> WeightSnapshot {
    let mut opt = OptimizerConfig::bgd(400, 3);
    opt.lr = 0.2;
    opt.stop_at_zero_error = true;
    let t = train(&b.spec, &b.init, &b.train, None, &opt).unwrap();
    assert_eq!(t.last_record().train.error_pct, 0.0, "setup did not reach zero error");
    let mut margin = opt.clone();
    margin.epochs = 10;
    margin.stop_at_zero_error = false;
    train(&b.spec, t.last_snapshot(), &b.train, None, &margin).unwrap().last_snapshot().clone()
}

#[test]
fn single_trajectory_stage_reduces_to_plain_training() {
    let b = bench(1, 100, &[4, 8, 8]);
    let cfg = StagedSgdConfig {
        stages: 1,
        trajectories_per_stage: 1,
        epochs_per_stage: 3,
        seed: 17,
        ..StagedSgdConfig::default()
    };
    let staged = staged_parallel_sgd(&b.spec, &b.init, &b.train, None, &cfg).unwrap();
    assert_eq!(staged.len(), 1);
    let mut opt = OptimizerConfig::sgd(cfg.lr, cfg.epochs_per_stage, staged_seed(17, 0, 0));
    opt.kind = OptimizerKind::Sgd { batch: cfg.batch };
    let plain = train(&b.spec, &b.init, &b.train, None, &opt).unwrap();
    assert_eq!(staged[0].records, plain.records);
    assert!(same_arrays(staged[0].last_snapshot(), plain.last_snapshot()));
}

#[test]
fn zero_restart_noise_starts_every_trajectory_from_the_same_point() {
    let b = bench(2, 100, &[4, 8, 8]);
    let cfg = StagedSgdConfig {
        stages: 2,
        trajectories_per_stage: 4,
        epochs_per_stage: 2,
        restart_c: 0.0,
        seed: 5,
        ..StagedSgdConfig::default()
    };
    let runs = staged_parallel_sgd(&b.spec, &b.init, &b.train, None, &cfg).unwrap();
    assert_eq!(runs.len(), 8);
    for stage in runs.chunks(4) {
        for t in &stage[1..] {
            assert!(same_arrays(&t.snapshots[0], &stage[0].snapshots[0]));
        }
    }
    // Stage 1 starts from the end of trajectory 0 of stage 0.
    assert!(same_arrays(&runs[4].snapshots[0], runs[0].last_snapshot()));
    let ids: Vec<&str> = runs.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids[5], "s01-t01");
}

#[test]
fn staged_endpoints_are_pairwise_distinct() {
    let b = bench(3, 500, &[16, 32, 32]);
    let cfg = StagedSgdConfig {
        stages: 3,
        trajectories_per_stage: 4,
        epochs_per_stage: 2,
        seed: 9,
        ..StagedSgdConfig::default()
    };
    let runs = staged_parallel_sgd(&b.spec, &b.init, &b.train, None, &cfg).unwrap();
    let ends: Vec<WeightSnapshot> = runs.iter().map(|r| r.last_snapshot().clone()).collect();
    let d = dissimilarity_matrix(&ends, &LayerSelection::All, Metric::OneMinusCosine).unwrap();
    for i in 0..ends.len() {
        for j in 0..i {
            assert!(d.get(i, j).unwrap() > 0.0, "endpoints {i} and {j} coincide");
        }
    }
}

#[test]
fn zero_multiplier_branch_tracks_the_main_run() {
    let b = bench(4, 100, &[4, 8, 8]);
    let cfg = BranchConfig {
        epochs: 6,
        branch_epochs: vec![0, 3],
        multipliers: vec![0.0],
        interp_every: 3,
        seed: 2,
        ..BranchConfig::default()
    };
    let res = bgd_branching(&b.spec, &b.init, &b.train, None, &cfg).unwrap();
    assert_eq!(res.branches.len(), 2);
    for br in &res.branches {
        assert_eq!(br.trajectory.last_snapshot().meta.epoch, 6);
        for s in &br.trajectory.snapshots {
            assert!(same_arrays(s, res.main.snapshot_at(s.meta.epoch).unwrap()));
        }
        assert!(!br.interpolation.is_empty());
        for row in &br.interpolation {
            let main = res.main.records.iter().find(|r| r.epoch == row.epoch).unwrap();
            assert_eq!(row.points[0].error_pct, main.train.error_pct);
        }
    }
}

#[test]
fn branch_epoch_past_the_run_is_rejected() {
    let b = bench(4, 100, &[4, 8, 8]);
    let cfg = BranchConfig {
        epochs: 5,
        branch_epochs: vec![10],
        ..BranchConfig::default()
    };
    assert!(bgd_branching(&b.spec, &b.init, &b.train, None, &cfg).is_err());
}

#[test]
fn interpolation_endpoints_are_exact() {
    let b = bench(5, 100, &[4, 8, 8]);
    let mut opt = OptimizerConfig::sgd(0.05, 2, 1);
    opt.kind = OptimizerKind::Sgd { batch: 25 };
    let a = train(&b.spec, &b.init, &b.train, None, &opt).unwrap().last_snapshot().clone();
    opt.seed = 2;
    let c = train(&b.spec, &b.init, &b.train, None, &opt).unwrap().last_snapshot().clone();
    let pts = interpolate(&b.spec, &a, &c, &[0.0, 0.5, 1.0], &b.train).unwrap();
    let (ea, ec) = (evaluate(&b.spec, &a, &b.train).unwrap(), evaluate(&b.spec, &c, &b.train).unwrap());
    assert_eq!(pts[0].error_pct.to_bits(), ea.error_pct.to_bits());
    assert_eq!(pts[0].loss.to_bits(), ea.loss.to_bits());
    assert_eq!(pts[2].error_pct.to_bits(), ec.error_pct.to_bits());
    assert_eq!(pts[2].loss.to_bits(), ec.loss.to_bits());

    let other = bench(5, 100, &[4, 8, 16]);
    assert!(interpolate(&b.spec, &a, &other.init, &[0.5], &b.train).is_err());
}

#[test]
fn similarity_of_independent_models_matches_marginal_accuracy() {
    let mut rng = rng_from(77);
    let n = 20_000;
    let chance: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
    let good: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    let s = similarity_from_correctness(vec!["ref".into(), "good".into()], &[chance, good.clone()]).unwrap();
    let marginal = good.iter().filter(|&&g| g).count() as f64 / n as f64;
    // Standard error of the conditional estimate with about 2,000 conditioning samples.
    let se = (0.7f64 * 0.3 / 2000.0).sqrt();
    assert!((s.p_cc[0][1].unwrap() - marginal).abs() < 4.0 * se);
    for m in [&s.p_cc, &s.p_ii] {
        for row in m {
            for v in row.iter().flatten() {
                assert!((0.0..=1.0).contains(v));
            }
        }
    }
    assert_eq!(s.p_cc[1][1], Some(1.0));
}

#[test]
fn similarity_flags_empty_conditioning_events() {
    let s = similarity_from_correctness(vec!["a".into(), "b".into()], &[vec![true; 4], vec![false, true, true, false]])
        .unwrap();
    assert_eq!(s.p_ii[0][1], None);
    assert_eq!(s.p_ii[0][0], None);
    assert_eq!(s.p_cc[0][1], Some(0.5));
    assert_eq!(s.p_ii[1][0], Some(0.0));
}

#[test]
fn unperturbed_retraining_at_a_minimum_keeps_zero_error() {
    let b = bench(6, 100, &[16, 32, 32]);
    let model = zero_error_model(&b);
    let cfg = FlatnessConfig {
        c: 0.0,
        repeats: 1,
        epochs: 10,
        seed: 4,
        ..FlatnessConfig::default()
    };
    let res = flatness_probe(&b.spec, &model, &b.train, b.test.as_ref(), &cfg).unwrap();
    assert!(res.trajectories[0].records.iter().all(|r| r.train.error_pct == 0.0));
    assert_eq!(res.similarity.models.last().unwrap(), "reference");
    assert_eq!(res.similarity.models.len(), 2);
}

#[test]
fn volume_probe_limits() {
    let b = bench(7, 100, &[16, 32, 32]);
    let model = zero_error_model(&b);
    let base = evaluate(&b.spec, &model, &b.train).unwrap().loss;
    let above = sublevel_volume_probe(&b.spec, &model, &b.train, &[1e-6], base * 1.01 + 1e-9, 200, 1).unwrap();
    assert_eq!(above[0].accepted, 200);
    let below = sublevel_volume_probe(&b.spec, &model, &b.train, &[1e-6], base * 0.5, 200, 1).unwrap();
    assert_eq!(below[0].accepted, 0);
    assert!(sublevel_volume_probe(&b.spec, &model, &b.train, &[0.5, 0.1], 1.0, 200, 1).is_err());
    assert!(sublevel_volume_probe(&b.spec, &model, &b.train, &[0.1], 1.0, 50, 1).is_err());
}

#[test]
fn volume_fraction_shrinks_with_radius_in_most_seeds() {
    let radii = [0.05, 0.2, 0.5, 1.0];
    let mut monotone = 0;
    let seeds = 3;
    for seed in 0..seeds {
        let b = bench(20 + seed, 100, &[16, 32, 32]);
        let mut opt = OptimizerConfig::bgd(30, seed);
        opt.lr = 0.2;
        let model = train(&b.spec, &b.init, &b.train, None, &opt).unwrap().last_snapshot().clone();
        let loss = evaluate(&b.spec, &model, &b.train).unwrap().loss;
        let pts = sublevel_volume_probe(&b.spec, &model, &b.train, &radii, loss * 1.5, 200, seed).unwrap();
        if pts.windows(2).all(|w| w[1].fraction <= w[0].fraction) {
            monotone += 1;
        }
    }
    assert!(2 * monotone > seeds, "non-increasing in only {monotone} of {seeds} seeds");
}

#[test]
fn wider_network_does_not_generalize_worse() {
    let mut setup = DeskSetup::desk(0);
    setup.widths = vec![4, 8, 8];
    let b = setup.prepare().unwrap();
    let rows = generalization_sweep(&b, &SweepConfig { seed: 0, ..SweepConfig::default() }).unwrap();
    let (narrow, wide) = (&rows[0], &rows[1]);
    assert_eq!((narrow.width_multiplier, wide.width_multiplier), (1, 4));
    assert_eq!(wide.parameters, 14_586);
    assert!(wide.val_error_pct <= narrow.val_error_pct + 3.0, "{rows:?}");
}

#[test]
fn random_labels_are_memorized_without_generalizing() {
    let mut setup = DeskSetup::desk(1);
    setup.widths = vec![4, 8, 8];
    let b = setup.prepare().unwrap();
    let cfg = SweepConfig {
        train_sizes: vec![100],
        epochs: 400,
        random_labels: true,
        seed: 1,
        ..SweepConfig::default()
    };
    let rows = generalization_sweep(&b, &cfg).unwrap();
    let wide = &rows[1];
    assert_eq!(wide.train_error_pct, 0.0);
    assert!((wide.val_error_pct - 90.0).abs() <= 5.0, "{wide:?}");
}

#[test]
fn sweep_preconditions() {
    let b = bench(8, 100, &[4, 8, 8]);
    let zero = SweepConfig { train_sizes: vec![0], ..SweepConfig::default() };
    assert!(generalization_sweep(&b, &zero).is_err());
    let single = SweepConfig { width_multipliers: vec![2], ..SweepConfig::default() };
    assert!(generalization_sweep(&b, &single).is_err());
    let too_many = SweepConfig { train_sizes: vec![101], ..SweepConfig::default() };
    assert!(generalization_sweep(&b, &too_many).is_err());
}

#[test]
fn staged_protocol_is_deterministic() {
    let b = bench(9, 100, &[4, 8, 8]);
    let cfg = StagedSgdConfig {
        stages: 2,
        trajectories_per_stage: 3,
        epochs_per_stage: 2,
        seed: 1,
        ..StagedSgdConfig::default()
    };
    let a = staged_parallel_sgd(&b.spec, &b.init, &b.train, None, &cfg).unwrap();
    let c = staged_parallel_sgd(&b.spec, &b.init, &b.train, None, &cfg).unwrap();
    assert_eq!(a, c);
}
