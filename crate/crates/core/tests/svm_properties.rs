use netlat::features::{FeatureMatrix, Target};
use netlat::svm::{self, KernelKind, KernelSpec, SvmConfig, TuneGrid};
use netlat::{Execution, SpeedLabel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn label(ord: u8) -> SpeedLabel {
    SpeedLabel::from_ordinal(ord).unwrap()
}

/// Inner disk (radius < 1) against an outer ring (radius in [2, 3]).
fn disk_and_ring(n: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let inner = i % 2 == 0;
        let r = if inner { rng.random_range(0.0..1.0) } else { rng.random_range(2.0..3.0) };
        let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        rows.push(vec![r * t.cos(), r * t.sin()]);
        labels.push(if inner { label(1) } else { label(4) });
    }
    FeatureMatrix::from_rows(vec!["u".into(), "v".into()], &rows, Some(Target::Label(labels))).unwrap()
}

/// Noisy three-class blobs with some overlap so that bounded alphas occur.
fn blobs(n: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [(0.0, 0.0), (2.0, 0.5), (1.0, 2.0)];
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let k = i % 3;
        let (cx, cy) = centers[k];
        rows.push(vec![cx + rng.random_range(-1.0..1.0), cy + rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)]);
        labels.push(label([2, 3, 6][k]));
    }
    FeatureMatrix::from_rows(vec!["a".into(), "b".into(), "c".into()], &rows, Some(Target::Label(labels))).unwrap()
}

fn pair_problem(data: &FeatureMatrix, pos: SpeedLabel, neg: SpeedLabel) -> (Vec<Vec<f64>>, Vec<f64>) {
    let labels = data.label_target().unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == pos || l == neg {
            x.push(data.row(i).to_vec());
            y.push(if l == pos { 1.0 } else { -1.0 });
        }
    }
    (x, y)
}

#[test]
fn trained_machines_are_dual_feasible_and_pass_kkt_audit() {
    let data = blobs(150, 1);
    for kernel in [
        KernelSpec::Linear,
        KernelSpec::Rbf { gamma: 0.5 },
        KernelSpec::Polynomial { degree: 3, gamma: 0.5, coef0: 1.0 },
    ] {
        let config = SvmConfig { kernel, cost: 4.0, ..Default::default() };
        let model = svm::train_multiclass(&data, &config).unwrap();
        assert_eq!(model.machines.len(), 3);
        let scaled: Vec<Vec<f64>> = data.rows().map(|r| model.scaler.as_ref().unwrap().transform_row(r)).collect();
        let scaled = FeatureMatrix::from_rows(data.columns().to_vec(), &scaled, data.target().cloned()).unwrap();
        for pm in &model.machines {
            let m = &pm.svm;
            assert!(m.converged);
            assert!(m.dual_sum().abs() <= 1e-6, "{kernel}: dual sum {}", m.dual_sum());
            assert!(m.coef.iter().all(|c| c.abs() > 0.0 && c.abs() <= config.cost));
            let (x, y) = pair_problem(&scaled, pm.positive, pm.negative);
            let refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
            assert_eq!(svm::kkt_violations(m, &refs, &y, 10.0 * config.tolerance).unwrap(), 0, "{kernel}");
        }
    }
}

#[test]
fn scaling_columns_does_not_change_predictions() {
    let data = blobs(120, 2);
    let scaled_rows: Vec<Vec<f64>> = data.rows().map(|r| r.iter().map(|v| v * 1000.0).collect()).collect();
    let big = FeatureMatrix::from_rows(data.columns().to_vec(), &scaled_rows, data.target().cloned()).unwrap();
    let config = SvmConfig { kernel: KernelSpec::Rbf { gamma: 0.5 }, cost: 8.0, ..Default::default() };
    let a = svm::train_multiclass(&data, &config).unwrap();
    let b = svm::train_multiclass(&big, &config).unwrap();
    let pa = svm::predict_all(&a, &data, Execution::Sequential).unwrap();
    let pb = svm::predict_all(&b, &big, Execution::Sequential).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn training_is_deterministic_across_execution_modes() {
    let data = blobs(90, 3);
    let base = SvmConfig { kernel: KernelSpec::Rbf { gamma: 1.0 }, cost: 2.0, seed: 4, ..Default::default() };
    let a = svm::train_multiclass(&data, &SvmConfig { exec: Execution::Parallel, ..base.clone() }).unwrap();
    let b = svm::train_multiclass(&data, &SvmConfig { exec: Execution::Sequential, ..base }).unwrap();
    assert_eq!(a.machines, b.machines);
    assert_eq!(
        svm::predict_all(&a, &data, Execution::Parallel).unwrap(),
        svm::predict_all(&b, &data, Execution::Sequential).unwrap()
    );
}

#[test]
fn tuner_picks_radial_kernel_for_disk_and_ring() {
    let data = disk_and_ring(200, 5);
    let grid = TuneGrid {
        kernels: vec![KernelKind::Linear, KernelKind::Rbf, KernelKind::Sigmoid],
        costs: vec![0.25, 1.0, 4.0],
        gammas: vec![0.125, 0.5, 2.0],
        degrees: vec![],
        coef0s: vec![0.1, 1.0],
    };
    let res = svm::tune(&data, &grid, 10, 11, &SvmConfig::default()).unwrap();
    assert_eq!(res.table.len(), 3 + 9 + 18);
    assert_eq!(res.best.kernel.kind(), KernelKind::Rbf);
    let best = res.table.iter().map(|r| r.mean_cv_accuracy).fold(f64::MIN, f64::max);
    assert_eq!(res.best_accuracy, best);
    let linear_best = res.table[..3].iter().map(|r| r.mean_cv_accuracy).fold(f64::MIN, f64::max);
    assert!(linear_best < 0.8, "linear reached {linear_best}");

    let seq = svm::tune(&data, &grid, 10, 11, &SvmConfig { exec: Execution::Sequential, ..Default::default() }).unwrap();
    assert_eq!(seq.table, res.table);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn degree_one_polynomial_is_linear(
        u in prop::collection::vec(-100.0f64..100.0, 1..6),
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = u.iter().map(|_| rng.random_range(-100.0..100.0)).collect();
        let lin = svm::kernel_eval(&KernelSpec::Linear, &u, &v).unwrap();
        let poly = svm::kernel_eval(&KernelSpec::Polynomial { degree: 1, gamma: 1.0, coef0: 0.0 }, &u, &v).unwrap();
        prop_assert!((lin - poly).abs() <= 1e-12 * lin.abs().max(1.0));
    }

    #[test]
    fn rbf_is_bounded_and_symmetric(
        u in prop::collection::vec(-10.0f64..10.0, 3),
        v in prop::collection::vec(-10.0f64..10.0, 3),
        gamma in 0.01f64..4.0,
    ) {
        let k = KernelSpec::Rbf { gamma };
        let a = svm::kernel_eval(&k, &u, &v).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(a, svm::kernel_eval(&k, &v, &u).unwrap());
    }

    #[test]
    fn separable_pairs_are_classified_by_sign(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(4..30);
        let x: Vec<Vec<f64>> = (0..n).map(|i| {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            vec![side * rng.random_range(0.5..3.0), rng.random_range(-2.0..2.0)]
        }).collect();
        let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let m = svm::smo_train(&refs, &y, &SvmConfig { kernel: KernelSpec::Linear, cost: 100.0, ..Default::default() }).unwrap();
        prop_assert!(m.dual_sum().abs() <= 1e-6);
        for (row, &label) in x.iter().zip(&y) {
            prop_assert_eq!(svm::predict_binary(&m, row).unwrap().1 as f64, label);
        }
    }
}
