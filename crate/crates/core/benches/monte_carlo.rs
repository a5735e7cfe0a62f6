//! Sequential vs parallel execution of the Monte Carlo loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bcgan::data::{make_gmm, mask_labels, GmmSpec, Split};
use bcgan::nn::{mlp, Activation, ParamSet};
use bcgan::stochastic::{predictive_stats, DropoutSpec};
use bcgan::trainer::{train_step_mapmc, Model, TrainConfig, TrainState};
use bcgan::{Exec, Matrix, Rng};
use rand::Rng as _;
use rand_distr::StandardNormal;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn predictive(c: &mut Criterion) {
    let specs = mlp(&[784, 128, 11], Activation::Softplus, Activation::Identity).unwrap();
    let theta = ParamSet::init(&specs, Rng::from_seed(1));
    let mut g = Rng::from_seed(2).generator();
    let x = Matrix::from_vec(64, 784, (0..64 * 784).map(|_| g.sample(StandardNormal)).collect()).unwrap();
    let spec = DropoutSpec::with_variance(0.05, 0.01).unwrap();
    let mut group = c.benchmark_group("predictive_stats_m16");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| predictive_stats(&theta, &specs, &spec, &x, 16, 100.0, Rng::from_seed(3), exec).unwrap())
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let spec = GmmSpec {
        means: vec![[-2.0, 0.0], [2.0, 0.0]],
        cov_scale: 0.25,
        per_class_count: 500,
    };
    let data = make_gmm(&spec, Rng::new(1, 1), Split::Train).unwrap();
    let data = mask_labels(&data, 25, Rng::new(1, 2)).unwrap();
    let model = Model::new(data.regime, 2, &[64, 64], &[64], Activation::Identity).unwrap();
    let batch = data.select(&(0..100).collect::<Vec<_>>());
    let mut group = c.benchmark_group("train_step_m8");
    for (name, exec) in MODES {
        let cfg = TrainConfig {
            m: 8,
            m_prime: 8,
            disc_dropout: DropoutSpec::with_variance(0.05, 0.01).unwrap(),
            gen_dropout: DropoutSpec::with_variance(0.1, 0.01).unwrap(),
            exec,
            ..TrainConfig::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter_batched(
                || TrainState::init(model.clone(), 0),
                |mut s| train_step_mapmc(&mut s, &batch, &cfg).unwrap(),
                criterion::BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, predictive, train_step);
criterion_main!(benches);
