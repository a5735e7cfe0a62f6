//! Evaluation metrics for trained (or snapshot) networks.

use rand::seq::index::sample;

use crate::data::{balanced_labels, Dataset, GmmSpec, Label};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::ParamSet;
use crate::objectives::{mean_discrepancy, RegimeKind};
use crate::rng::Rng;
use crate::stochastic::{predictive_stats, sample_fake_batch};
use crate::trainer::{Model, TrainConfig, TrainState};

const TAG_EVAL: u64 = 0xE7A1;
const TAG_TEST_ERROR: u64 = 1;
const TAG_GENERATE: u64 = 2;
const TAG_VARIANCE: u64 = 3;

/// Number of probe rows used for the predictive-variance metric.
pub const PROBE_ROWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub epoch: usize,
    pub test_error_pct: f64,
    pub mmd_real_fake: f64,
    pub mean_pred_variance: f64,
    pub mode_coverage: f64,
}

/// Percentage of rows whose argmax over the real-class columns of `mean`
/// differs from the label. Columns outside `real_outputs` are ignored.
pub fn classification_error(
    mean: &Matrix,
    labels: &[Label],
    real_outputs: std::ops::Range<usize>,
) -> Result<f64> {
    if mean.rows() != labels.len() {
        return Err(Error::dim(
            "classification_error",
            format!("{} predictions for {} labels", mean.rows(), labels.len()),
        ));
    }
    if labels.is_empty() {
        return Err(Error::arg("classification error of an empty set"));
    }
    let mut wrong = 0usize;
    for (row, label) in mean.iter_rows().zip(labels) {
        let truth = label
            .class()
            .ok_or_else(|| Error::arg("test rows must be labeled"))?;
        let offset = real_outputs.start;
        let pred = row[real_outputs.clone()]
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
            .0
            + offset;
        if pred != truth {
            wrong += 1;
        }
    }
    Ok(100.0 * wrong as f64 / labels.len() as f64)
}

fn eval_rng(state: &TrainState) -> Rng {
    state.rng.derive(TAG_EVAL).derive(state.epoch as u64)
}

/// Semi-supervised test error: argmax of the predictive mean over the `K`
/// real classes, using `cfg.m` discriminator samples.
pub fn test_error(state: &TrainState, test: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let regime = state.model.regime;
    if regime.kind == RegimeKind::Unsupervised {
        return Err(Error::arg("test error needs class labels; the regime is unsupervised"));
    }
    if test.labels.iter().any(|l| l.class().is_none()) {
        return Err(Error::arg("test rows must be labeled"));
    }
    let stats = predictive_stats(
        &state.theta,
        &state.model.disc_specs,
        &cfg.disc_dropout,
        &test.x,
        cfg.m,
        cfg.tau,
        eval_rng(state).derive(TAG_TEST_ERROR),
        cfg.exec,
    )?;
    classification_error(&stats.mean, &test.labels, regime.real_outputs())
}

/// Fraction of mixture means with at least one fake row within `radius`.
pub fn mode_coverage(fake_x: &Matrix, spec: &GmmSpec, radius: f64) -> f64 {
    coverage_of(fake_x, &spec.means.iter().map(|m| m.to_vec()).collect::<Vec<_>>(), radius)
}

/// Fraction of `modes` with at least one row of `points` within `radius`.
pub fn coverage_of(points: &Matrix, modes: &[Vec<f64>], radius: f64) -> f64 {
    if modes.is_empty() {
        return 0.0;
    }
    let r2 = radius * radius;
    let covered = modes
        .iter()
        .filter(|mode| {
            points.iter_rows().any(|p| {
                p.iter()
                    .zip(mode.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    <= r2
            })
        })
        .count();
    covered as f64 / modes.len() as f64
}

/// Generates `count` balanced fakes in chunks of `cfg.batch_fake`, one
/// generator function sample per chunk. Returns rows and their class labels.
pub fn generate(
    omega: &ParamSet,
    model: &Model,
    cfg: &TrainConfig,
    count: usize,
    rng: Rng,
) -> Result<(Matrix, Vec<usize>)> {
    let k = model.regime.generator_classes();
    let labels = balanced_labels(count, k);
    let mut data = Vec::with_capacity(count * model.data_dim());
    for (chunk_idx, chunk) in labels.chunks(cfg.batch_fake.max(1)).enumerate() {
        let fb = sample_fake_batch(
            omega,
            &model.gen_specs,
            &cfg.gen_dropout,
            chunk,
            k,
            rng.derive(chunk_idx as u64),
        )?;
        data.extend_from_slice(fb.batch.x.as_slice());
    }
    Ok((Matrix::from_vec(count, model.data_dim(), data)?, labels))
}

/// Class-conditional mean discrepancy in input space: the average over
/// classes of `‖mean(real | k) − mean(fake | k)‖²`. Falls back to the
/// unconditional discrepancy when the real rows carry no labels.
pub fn class_conditional_discrepancy(
    real: &Dataset,
    fake_x: &Matrix,
    fake_labels: &[usize],
) -> Result<f64> {
    let k = fake_labels.iter().map(|&c| c + 1).max().unwrap_or(0);
    let mut total = 0.0;
    let mut classes = 0usize;
    for c in 0..k {
        let real_idx: Vec<usize> = (0..real.len())
            .filter(|&i| real.labels[i] == Label::Class(c))
            .collect();
        let fake_idx: Vec<usize> = (0..fake_labels.len())
            .filter(|&i| fake_labels[i] == c)
            .collect();
        if real_idx.is_empty() || fake_idx.is_empty() {
            continue;
        }
        total += mean_discrepancy(&real.x.select_rows(&real_idx), &fake_x.select_rows(&fake_idx))?;
        classes += 1;
    }
    if classes == 0 {
        return mean_discrepancy(&real.x, fake_x);
    }
    Ok(total / classes as f64)
}

/// Picks `PROBE_ROWS` (or fewer) rows of `data` without replacement.
pub fn probe_rows(data: &Dataset, rng: Rng) -> Matrix {
    let n = PROBE_ROWS.min(data.len());
    let idx = sample(&mut rng.generator(), data.len(), n).into_vec();
    data.x.select_rows(&idx)
}

/// Mean predictive variance over probe rows and classes for discriminator `theta`.
pub fn mean_predictive_variance(
    theta: &ParamSet,
    model: &Model,
    probe: &Matrix,
    cfg: &TrainConfig,
    rng: Rng,
) -> Result<f64> {
    Ok(predictive_stats(
        theta,
        &model.disc_specs,
        &cfg.disc_dropout,
        probe,
        cfg.m,
        cfg.tau,
        rng,
        cfg.exec,
    )?
    .mean_variance())
}

/// Mean predictive variance at each `(epoch, θ)` snapshot. Every snapshot
/// uses the same sampling streams, so differences come from the parameters.
pub fn variance_trajectory(
    snapshots: &[(usize, ParamSet)],
    model: &Model,
    probe: &Matrix,
    cfg: &TrainConfig,
    rng: Rng,
) -> Result<Vec<(usize, f64)>> {
    if snapshots.len() < 2 {
        return Err(Error::arg("a trajectory needs at least two snapshots"));
    }
    snapshots
        .iter()
        .map(|(epoch, theta)| Ok((*epoch, mean_predictive_variance(theta, model, probe, cfg, rng)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Rows whose predictive variance is tracked.
    pub probe: Matrix,
    pub gmm: Option<GmmSpec>,
    /// Coverage radius; defaults to `3 × cov_scale` for mixture data.
    pub coverage_radius: Option<f64>,
}

impl EvalOptions {
    pub fn radius(&self, real: &Dataset) -> f64 {
        if let Some(r) = self.coverage_radius {
            return r;
        }
        match &self.gmm {
            Some(g) => 3.0 * g.cov_scale,
            None => mean_within_class_distance(real),
        }
    }
}

fn class_means(data: &Dataset) -> Vec<Vec<f64>> {
    (0..data.regime.num_classes)
        .filter_map(|c| {
            let idx: Vec<usize> = (0..data.len())
                .filter(|&i| data.labels[i] == Label::Class(c))
                .collect();
            (!idx.is_empty()).then(|| data.x.select_rows(&idx).column_means())
        })
        .collect()
}

fn mean_within_class_distance(data: &Dataset) -> f64 {
    let means = class_means(data);
    let mut total = 0.0;
    let mut count = 0usize;
    for (row, label) in data.x.iter_rows().zip(&data.labels) {
        if let Some(c) = label.class() {
            if let Some(mu) = means.get(c) {
                total += row
                    .iter()
                    .zip(mu)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                count += 1;
            }
        }
    }
    if count == 0 {
        1.0
    } else {
        total / count as f64
    }
}

/// Every metric at once, on a balanced fake set the size of `test`.
pub fn evaluate(
    state: &TrainState,
    test: &Dataset,
    cfg: &TrainConfig,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let rng = eval_rng(state);
    let test_error_pct = if state.model.regime.kind == RegimeKind::Unsupervised {
        0.0
    } else {
        test_error(state, test, cfg)?
    };
    let (fake_x, fake_labels) = generate(
        &state.omega,
        &state.model,
        cfg,
        test.len(),
        rng.derive(TAG_GENERATE),
    )?;
    let mmd_real_fake = class_conditional_discrepancy(test, &fake_x, &fake_labels)?;
    let mean_pred_variance = mean_predictive_variance(
        &state.theta,
        &state.model,
        &options.probe,
        cfg,
        state.rng.derive(TAG_EVAL).derive(TAG_VARIANCE),
    )?;
    let radius = options.radius(test);
    let mode_coverage = match &options.gmm {
        Some(g) => mode_coverage(&fake_x, g, radius),
        None => coverage_of(&fake_x, &class_means(test), radius),
    };
    let report = EvalReport {
        epoch: state.epoch,
        test_error_pct,
        mmd_real_fake,
        mean_pred_variance,
        mode_coverage,
    };
    if ![
        report.test_error_pct,
        report.mmd_real_fake,
        report.mean_pred_variance,
        report.mode_coverage,
    ]
    .iter()
    .all(|v| v.is_finite())
    {
        return Err(Error::NonFinite("evaluation report".into()));
    }
    Ok(report)
}
