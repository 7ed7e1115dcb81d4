use netlat::features::{FeatureMatrix, Target};
use netlat::mlp::{self, MlpConfig, MlpModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_problem(seed: u64) -> (MlpModel, Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=4);
    let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=6)).collect();
    let config = MlpConfig { hidden_sizes: hidden, ..Default::default() };
    let mut model = mlp::init(dim, &config, seed).unwrap();
    for l in &mut model.layers {
        l.biases.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let ys = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
    (model, xs, ys)
}

fn loss(model: &MlpModel, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    xs.iter().zip(ys).map(|(x, y)| (mlp::forward(model, x).unwrap() - y).powi(2)).sum::<f64>() / xs.len() as f64
}

fn max_fd_error(seed: u64) -> f64 {
    let (model, xs, ys) = random_problem(seed);
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let (_, grads) = mlp::gradients(&model, &refs, &ys).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for l in 0..model.layers.len() {
        let n_w = model.layers[l].weights.len();
        let n_b = model.layers[l].biases.len();
        for k in 0..n_w + n_b {
            let probe = |delta: f64| {
                let mut m = model.clone();
                if k < n_w {
                    m.layers[l].weights[k] += delta;
                } else {
                    m.layers[l].biases[k - n_w] += delta;
                }
                loss(&m, &xs, &ys)
            };
            let numeric = (probe(h) - probe(-h)) / (2.0 * h);
            let analytic =
                if k < n_w { grads.layers[l].weights[k] } else { grads.layers[l].biases[k - n_w] };
            let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn gradients_match_central_differences() {
    for seed in 0..25 {
        let err = max_fd_error(seed);
        assert!(err <= 1e-4, "seed {seed}: relative error {err}");
    }
}

fn linear_task(n: usize) -> FeatureMatrix {
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let ys = xs.iter().map(|x| 2.0 * x + 3.0).collect();
    FeatureMatrix::new(vec!["x1".into()], xs, Some(Target::Rtt(ys))).unwrap()
}

#[test]
fn linear_target_is_learned_and_loss_decreases() {
    let data = linear_task(2000);
    let config = MlpConfig { epochs: 500, seed: 3, ..Default::default() };
    let out = mlp::train(&data, &config).unwrap();
    let ev = mlp::evaluate(&out.model, &data.select_rows(&out.test_rows)).unwrap();
    assert!(ev.mae_ms <= 0.05, "test MAE {}", ev.mae_ms);

    let windows: Vec<f64> = out.history.chunks(50).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    let slack = 0.01 * windows[0];
    for pair in windows.windows(2) {
        assert!(pair[1] <= pair[0] + slack, "smoothed loss rose: {windows:?}");
    }
}

#[test]
fn scaler_sees_only_training_rows() {
    let data = linear_task(300);
    let config = MlpConfig { hidden_sizes: vec![4], epochs: 1, seed: 9, ..Default::default() };
    let base = mlp::train(&data, &config).unwrap();
    let mut raw = data.data().to_vec();
    for &i in &base.test_rows {
        raw[i] += 1000.0;
    }
    let perturbed = FeatureMatrix::new(data.columns().to_vec(), raw, data.target().cloned()).unwrap();
    let other = mlp::train(&perturbed, &config).unwrap();
    assert_eq!(base.model.scaler, other.model.scaler);
    assert_eq!(base.history, other.history);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn identical_inputs_give_identical_models(seed in 0u64..1000) {
        let data = linear_task(64);
        let config = MlpConfig { hidden_sizes: vec![6, 6], epochs: 3, seed, ..Default::default() };
        let a = mlp::train(&data, &config).unwrap();
        let b = mlp::train(&data, &config).unwrap();
        prop_assert_eq!(a.model, b.model);
        prop_assert_eq!(a.history, b.history);
    }

    #[test]
    fn finite_difference_agreement(seed in 100u64..10_000) {
        prop_assert!(max_fd_error(seed) <= 1e-4);
    }
}
