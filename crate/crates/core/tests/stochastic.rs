mod common;

use bcgan::data::Label;
use bcgan::nn::{forward, mlp, softmax_rows, Activation, Layer, LayerSpec, ParamSet};
use bcgan::stochastic::{predictive_stats, sample_fake_batch, sample_function, DropoutSpec};
use bcgan::{Exec, Matrix, Rng};
use common::gaussian_matrix;

/// One weight matrix holding `n` entries, all equal to `value`.
fn flat_params(n: usize, value: f64) -> (Vec<LayerSpec>, ParamSet) {
    let specs = vec![LayerSpec::new(n, 1, Activation::Identity)];
    let p = ParamSet::new(vec![Layer {
        w: Matrix::filled(1, n, value),
        b: Matrix::zeros(1, 1),
    }])
    .unwrap();
    (specs, p)
}

const DRAWS: usize = 100_000;

#[test]
fn bernoulli_keep_fraction_within_four_standard_errors() {
    let (_, p) = flat_params(DRAWS, 1.0);
    for drop in [0.05, 0.1, 0.5] {
        let f = sample_function(&p, &DropoutSpec::new(drop, 0.0).unwrap(), Rng::new(7, 1)).unwrap();
        let w = f.mask().layers()[0].w.as_slice();
        let keep = w.iter().sum::<f64>() / DRAWS as f64;
        let q = 1.0 - drop;
        let se = (q * (1.0 - q) / DRAWS as f64).sqrt();
        assert!((keep - q).abs() < 4.0 * se, "drop {drop}: keep {keep}");
    }
}

#[test]
fn unit_weight_mean_under_ten_percent_drop() {
    let (_, p) = flat_params(DRAWS, 1.0);
    let f = sample_function(&p, &DropoutSpec::new(0.1, 0.0).unwrap(), Rng::new(7, 2)).unwrap();
    let eff = f.params().layers()[0].w.as_slice();
    let mean = eff.iter().sum::<f64>() / DRAWS as f64;
    let se = (0.9 * 0.1 / DRAWS as f64).sqrt();
    assert!((mean - 0.9).abs() < 3.0 * se);
}

#[test]
fn gaussian_noise_moments() {
    let (_, p) = flat_params(DRAWS, 0.0);
    for variance in [0.9, 0.01] {
        let spec = DropoutSpec::with_variance(0.0, variance).unwrap();
        let f = sample_function(&p, &spec, Rng::new(7, 3)).unwrap();
        let beta = f.noise().layers()[0].w.as_slice();
        let n = DRAWS as f64;
        let mean = beta.iter().sum::<f64>() / n;
        let var = beta.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 * (variance / n).sqrt());
        assert!((var / variance - 1.0).abs() < 0.05, "variance {var} vs {variance}");
    }
}

#[test]
fn biases_are_left_alone() {
    let specs = mlp(&[3, 5, 2], Activation::Softplus, Activation::Identity).unwrap();
    let p = ParamSet::init(&specs, Rng::from_seed(1)).map(|v| v + 0.25);
    let f = sample_function(&p, &DropoutSpec::new(0.5, 1.0).unwrap(), Rng::from_seed(2)).unwrap();
    for (a, b) in f.params().layers().iter().zip(p.layers()) {
        assert_eq!(a.b, b.b);
    }
}

#[test]
fn trivial_perturbations() {
    let specs = mlp(&[3, 4, 2], Activation::Softplus, Activation::Identity).unwrap();
    let p = ParamSet::init(&specs, Rng::from_seed(3));
    let none = sample_function(&p, &DropoutSpec::NONE, Rng::from_seed(4)).unwrap();
    assert_eq!(none.params(), &p);
    let all = sample_function(&p, &DropoutSpec::new(1.0, 0.0).unwrap(), Rng::from_seed(4)).unwrap();
    for layer in all.params().layers() {
        assert!(layer.w.as_slice().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn sampling_is_reproducible_and_recomputable() {
    let specs = mlp(&[3, 4, 2], Activation::Softplus, Activation::Identity).unwrap();
    let p = ParamSet::init(&specs, Rng::from_seed(5));
    let spec = DropoutSpec::new(0.3, 0.2).unwrap();
    let a = sample_function(&p, &spec, Rng::new(1, 9)).unwrap();
    let b = sample_function(&p, &spec, Rng::new(1, 9)).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(&a.recompute(&p).unwrap(), a.params());
}

#[test]
fn fake_batches_use_one_function_and_respect_streams() {
    let specs = mlp(&[3, 6, 2], Activation::Softplus, Activation::Identity).unwrap();
    let omega = ParamSet::init(&specs, Rng::from_seed(6));
    let spec = DropoutSpec::new(0.1, 0.3).unwrap();
    let labels = [0, 1, 2, 0, 1];
    let a = sample_fake_batch(&omega, &specs, &spec, &labels, 3, Rng::new(2, 0)).unwrap();
    let again = sample_fake_batch(&omega, &specs, &spec, &labels, 3, Rng::new(2, 0)).unwrap();
    assert_eq!(a.batch.x, again.batch.x);
    assert_eq!(
        a.batch.labels,
        labels.iter().map(|&c| Label::Class(c)).collect::<Vec<_>>()
    );
    // every row comes from the single recorded function
    let (regen, _) = forward(&a.function, &a.input, &specs).unwrap();
    assert_eq!(regen, a.batch.x);
    // rows with equal labels are therefore equal
    assert_eq!(a.batch.x.row(0), a.batch.x.row(3));

    let mut differing = 0;
    for t in 0..100u64 {
        let x = sample_fake_batch(&omega, &specs, &spec, &labels, 3, Rng::new(3, 2 * t)).unwrap();
        let y = sample_fake_batch(&omega, &specs, &spec, &labels, 3, Rng::new(3, 2 * t + 1)).unwrap();
        if x.batch.x != y.batch.x {
            differing += 1;
        }
    }
    assert_eq!(differing, 100);
    assert!(sample_fake_batch(&omega, &specs, &spec, &[], 3, Rng::new(2, 0)).is_err());
}

#[test]
fn zero_generator_with_sigmoid_output_is_half_everywhere() {
    let specs = mlp(&[2, 4, 3], Activation::Softplus, Activation::Sigmoid).unwrap();
    let omega = ParamSet::zeros(&specs);
    let fb = sample_fake_batch(&omega, &specs, &DropoutSpec::NONE, &[0, 1], 2, Rng::from_seed(0)).unwrap();
    assert!(fb.batch.x.as_slice().iter().all(|&v| v == 0.5));
}

/// Two explicit passes over independently drawn functions: mean first, then
/// the spread about it.
fn two_pass_oracle(
    theta: &ParamSet,
    specs: &[LayerSpec],
    spec: &DropoutSpec,
    x: &Matrix,
    m: usize,
    tau: f64,
    rng: Rng,
) -> (Vec<f64>, Vec<f64>) {
    let probs: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let f = sample_function(theta, spec, rng.derive(i as u64)).unwrap();
            softmax_rows(&forward(&f, x, specs).unwrap().0).into_vec()
        })
        .collect();
    let len = probs[0].len();
    let mut mean = vec![0.0; len];
    for p in &probs {
        for j in 0..len {
            mean[j] += p[j];
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let mut var = vec![1.0 / tau; len];
    for p in &probs {
        for j in 0..len {
            var[j] += (p[j] - mean[j]).powi(2) / m as f64;
        }
    }
    (mean, var)
}

#[test]
fn predictive_stats_matches_two_pass_oracle() {
    let specs = mlp(&[2, 5, 3], Activation::Softplus, Activation::Identity).unwrap();
    for t in 0..10u64 {
        let theta = ParamSet::init(&specs, Rng::new(40, t));
        let x = gaussian_matrix(4, 2, 1.0, Rng::new(41, t));
        let spec = DropoutSpec::new(0.2, 0.5).unwrap();
        for m in [2, 5] {
            let stats = predictive_stats(&theta, &specs, &spec, &x, m, 100.0, Rng::new(42, t), Exec::Sequential)
                .unwrap();
            let (mean, var) = two_pass_oracle(&theta, &specs, &spec, &x, m, 100.0, Rng::new(42, t));
            for (a, b) in stats.mean.as_slice().iter().zip(&mean) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in stats.variance.as_slice().iter().zip(&var) {
                assert!((a - b).abs() < 1e-12);
            }
            for row in stats.mean.iter_rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            assert!(stats.variance.as_slice().iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn degenerate_functions_give_prior_variance() {
    let specs = mlp(&[2, 5, 3], Activation::Softplus, Activation::Identity).unwrap();
    let theta = ParamSet::init(&specs, Rng::from_seed(11));
    let x = gaussian_matrix(6, 2, 1.0, Rng::from_seed(12));
    let stats = predictive_stats(&theta, &specs, &DropoutSpec::NONE, &x, 7, 100.0, Rng::from_seed(0), Exec::Sequential)
        .unwrap();
    assert!(stats.variance.as_slice().iter().all(|&v| v == 1.0 / 100.0));
    let stats = predictive_stats(&theta, &specs, &DropoutSpec::NONE, &x, 3, 1e12, Rng::from_seed(0), Exec::Sequential)
        .unwrap();
    assert!(stats.variance.as_slice().iter().all(|&v| v < 1e-11));
    assert!(predictive_stats(&theta, &specs, &DropoutSpec::NONE, &x, 0, 1.0, Rng::from_seed(0), Exec::Sequential).is_err());
}

#[test]
fn execution_mode_does_not_change_results() {
    let specs = mlp(&[2, 8, 3], Activation::Softplus, Activation::Identity).unwrap();
    let theta = ParamSet::init(&specs, Rng::from_seed(21));
    let x = gaussian_matrix(16, 2, 1.0, Rng::from_seed(22));
    let spec = DropoutSpec::new(0.1, 0.3).unwrap();
    let seq = predictive_stats(&theta, &specs, &spec, &x, 9, 10.0, Rng::from_seed(23), Exec::Sequential).unwrap();
    let par = predictive_stats(&theta, &specs, &spec, &x, 9, 10.0, Rng::from_seed(23), Exec::Parallel).unwrap();
    assert_eq!(seq, par);
}
