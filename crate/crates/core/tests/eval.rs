mod common;

use bcgan::data::{make_gmm, Dataset, GmmSpec, Label, Split};
use bcgan::eval::{
    class_conditional_discrepancy, coverage_of, evaluate, generate, mode_coverage, probe_rows,
    test_error, variance_trajectory, EvalOptions,
};
use bcgan::nn::{weight_normalize, Activation, ParamSet};
use bcgan::objectives::LabelRegime;
use bcgan::stochastic::DropoutSpec;
use bcgan::trainer::{Model, TrainConfig, TrainState};
use bcgan::{Matrix, Rng};
use common::gaussian_matrix;
use proptest::prelude::*;
use rand::Rng as _;

fn two_modes(per_class: usize) -> GmmSpec {
    GmmSpec {
        means: vec![[-2.0, 0.0], [2.0, 0.0]],
        cov_scale: 0.25,
        per_class_count: per_class,
    }
}

fn model() -> Model {
    Model::new(LabelRegime::semi_supervised(2), 2, &[4], &[5], Activation::Identity).unwrap()
}

#[test]
fn labels_independent_of_inputs_give_chance_error() {
    let n = 4000;
    let mut g = Rng::from_seed(31).generator();
    let labels = (0..n).map(|_| Label::Class(g.random_range(0..2))).collect();
    let test = Dataset::new(
        gaussian_matrix(n, 2, 1.0, Rng::from_seed(32)),
        labels,
        LabelRegime::semi_supervised(2),
        Split::Test,
    )
    .unwrap();
    let state = TrainState::init(model(), 4);
    let err = test_error(&state, &test, &TrainConfig::default()).unwrap();
    let se = 100.0 * (0.25 / n as f64).sqrt();
    assert!((err - 50.0).abs() < 4.0 * se, "error {err}%");
}

#[test]
fn test_error_ignores_row_order() {
    let test = make_gmm(&two_modes(50), Rng::new(1, 3), Split::Test).unwrap();
    let state = TrainState::init(model(), 8);
    let cfg = TrainConfig { m: 4, ..TrainConfig::default() };
    let a = test_error(&state, &test, &cfg).unwrap();
    let perm: Vec<usize> = (0..test.len()).map(|i| (i * 37) % test.len()).collect();
    let mut shuffled = test.clone();
    shuffled.x = test.x.select_rows(&perm);
    shuffled.labels = perm.iter().map(|&i| test.labels[i]).collect();
    assert_eq!(a, test_error(&state, &shuffled, &cfg).unwrap());
}

#[test]
fn test_error_rejects_unlabeled_rows_and_unsupervised_models() {
    let mut test = make_gmm(&two_modes(5), Rng::new(1, 3), Split::Test).unwrap();
    let state = TrainState::init(model(), 8);
    test.labels[0] = Label::Unlabeled;
    assert!(test_error(&state, &test, &TrainConfig::default()).is_err());

    let unsup = Model::new(LabelRegime::unsupervised(), 2, &[3], &[3], Activation::Identity).unwrap();
    let test = make_gmm(&two_modes(5), Rng::new(1, 3), Split::Test).unwrap();
    assert!(test_error(&TrainState::init(unsup, 1), &test, &TrainConfig::default()).is_err());
}

#[test]
fn generated_sets_are_balanced_and_reproducible() {
    let state = TrainState::init(model(), 2);
    let cfg = TrainConfig { batch_fake: 7, ..TrainConfig::default() };
    let (x, y) = generate(&state.omega, &state.model, &cfg, 30, Rng::from_seed(5)).unwrap();
    assert_eq!(x.rows(), 30);
    assert_eq!(y.iter().filter(|&&c| c == 0).count(), 15);
    let (x2, _) = generate(&state.omega, &state.model, &cfg, 30, Rng::from_seed(5)).unwrap();
    assert_eq!(x, x2);
    let (empty, _) = generate(&state.omega, &state.model, &cfg, 0, Rng::from_seed(5)).unwrap();
    assert_eq!(empty.rows(), 0);
}

#[test]
fn class_conditional_discrepancy_examples() {
    let real = make_gmm(&two_modes(200), Rng::from_seed(9), Split::Test).unwrap();
    // fakes placed exactly at the per-class real means
    let means: Vec<Vec<f64>> = (0..2)
        .map(|c| {
            let idx: Vec<usize> = (0..real.len()).filter(|&i| real.labels[i] == Label::Class(c)).collect();
            real.x.select_rows(&idx).column_means()
        })
        .collect();
    let fake = Matrix::from_rows(&means).unwrap();
    assert!(class_conditional_discrepancy(&real, &fake, &[0, 1]).unwrap() < 1e-24);
    // swapped labels: each class is off by its mean difference
    let swapped = class_conditional_discrepancy(&real, &fake, &[1, 0]).unwrap();
    let d2: f64 = means[0].iter().zip(&means[1]).map(|(a, b)| (a - b) * (a - b)).sum();
    assert!((swapped - d2).abs() < 1e-12);
}

#[test]
fn variance_trajectory_is_nonnegative_and_degenerate_at_prior() {
    let state = TrainState::init(model(), 6);
    let data = make_gmm(&two_modes(30), Rng::from_seed(1), Split::Train).unwrap();
    let probe = probe_rows(&data, Rng::from_seed(2));
    assert_eq!(probe.rows(), 10);
    let snaps = vec![
        (0, state.theta.clone()),
        (1, weight_normalize(&state.theta).unwrap()),
        (2, state.theta.map(|v| 3.0 * v)),
    ];
    let cfg = TrainConfig { m: 5, ..TrainConfig::default() };
    let traj = variance_trajectory(&snaps, &state.model, &probe, &cfg, Rng::from_seed(3)).unwrap();
    assert_eq!(traj.iter().map(|t| t.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert!(traj.iter().all(|&(_, v)| v >= 1.0 / cfg.tau));

    let flat = TrainConfig { disc_dropout: DropoutSpec::NONE, ..cfg };
    let traj = variance_trajectory(&snaps, &state.model, &probe, &flat, Rng::from_seed(3)).unwrap();
    assert!(traj.iter().all(|&(_, v)| v == 1.0 / flat.tau));
    assert!(variance_trajectory(&snaps[..1], &state.model, &probe, &flat, Rng::from_seed(3)).is_err());
}

#[test]
fn evaluate_reports_every_metric() {
    let spec = two_modes(50);
    let test = make_gmm(&spec, Rng::new(1, 3), Split::Test).unwrap();
    let state = TrainState::init(model(), 3);
    let options = EvalOptions {
        probe: probe_rows(&test, Rng::from_seed(4)),
        gmm: Some(spec.clone()),
        coverage_radius: None,
    };
    assert_eq!(options.radius(&test), 0.75);
    let cfg = TrainConfig::default();
    let r = evaluate(&state, &test, &cfg, &options).unwrap();
    assert_eq!(r.epoch, 0);
    assert!((0.0..=100.0).contains(&r.test_error_pct));
    assert!(r.mmd_real_fake >= 0.0);
    assert!(r.mean_pred_variance >= 1.0 / cfg.tau);
    assert!((0.0..=1.0).contains(&r.mode_coverage));
    assert_eq!(r, evaluate(&state, &test, &cfg, &options).unwrap());

    // without mixture metadata, coverage falls back to per-class real means
    let options = EvalOptions { gmm: None, ..options };
    let r = evaluate(&state, &test, &cfg, &options).unwrap();
    assert!((0.0..=1.0).contains(&r.mode_coverage));
}

#[test]
fn trained_parameters_change_the_report_only_through_the_state() {
    let spec = two_modes(20);
    let test = make_gmm(&spec, Rng::new(1, 3), Split::Test).unwrap();
    let a = TrainState::init(model(), 3);
    let mut b = a.clone();
    b.omega = ParamSet::zeros(&b.model.gen_specs);
    let options = EvalOptions {
        probe: probe_rows(&test, Rng::from_seed(4)),
        gmm: Some(spec),
        coverage_radius: Some(0.75),
    };
    let cfg = TrainConfig::default();
    let ra = evaluate(&a, &test, &cfg, &options).unwrap();
    let rb = evaluate(&b, &test, &cfg, &options).unwrap();
    // the discriminator is shared, so classification metrics agree
    assert_eq!(ra.test_error_pct, rb.test_error_pct);
    assert_eq!(ra.mean_pred_variance, rb.mean_pred_variance);
    // a zero generator puts every fake at the origin, 2 away from each mode
    assert_eq!(rb.mode_coverage, 0.0);
}

proptest! {
    #[test]
    fn coverage_grows_with_radius(
        pts in proptest::collection::vec((-4.0f64..4.0, -4.0f64..4.0), 0..20),
        r1 in 0.0f64..3.0,
        extra in 0.0f64..3.0,
    ) {
        let flat: Vec<f64> = pts.iter().flat_map(|&(a, b)| [a, b]).collect();
        let x = Matrix::from_vec(pts.len(), 2, flat).unwrap();
        let spec = GmmSpec {
            means: vec![[-2.0, 0.0], [2.0, 0.0], [0.0, 2.0]],
            cov_scale: 0.25,
            per_class_count: 1,
        };
        let a = mode_coverage(&x, &spec, r1);
        let b = mode_coverage(&x, &spec, r1 + extra);
        prop_assert!(a <= b);
        prop_assert!((0.0..=1.0).contains(&a));
        let modes: Vec<Vec<f64>> = spec.means.iter().map(|m| m.to_vec()).collect();
        prop_assert_eq!(a, coverage_of(&x, &modes, r1));
    }
}
