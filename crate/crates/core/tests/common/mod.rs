#![allow(dead_code)]

use bcgan::data::{Label, LabeledBatch};
use bcgan::nn::{mlp, Activation, LayerSpec, ParamSet};
use bcgan::{Matrix, Rng};
use rand::Rng as _;
use rand_distr::StandardNormal;

pub fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: Rng) -> Matrix {
    let mut g = rng.generator();
    let data = (0..rows * cols)
        .map(|_| scale * g.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Same shapes as `p`, entries N(0, scale²).
pub fn gaussian_params(p: &ParamSet, scale: f64, rng: Rng) -> ParamSet {
    let mut g = rng.generator();
    let flat: Vec<f64> = (0..p.total_dim())
        .map(|_| scale * g.sample::<f64, _>(StandardNormal))
        .collect();
    p.from_flat_like(&flat).unwrap()
}

pub fn random_specs(rng: Rng, in_dim: usize, out_dim: usize, output: Activation) -> Vec<LayerSpec> {
    let mut g = rng.generator();
    let depth = g.random_range(2..=3);
    let mut widths = vec![in_dim];
    for _ in 1..depth {
        widths.push(g.random_range(2..=5));
    }
    widths.push(out_dim);
    let hidden = if g.random_bool(0.5) {
        Activation::Softplus
    } else {
        Activation::Sigmoid
    };
    mlp(&widths, hidden, output).unwrap()
}

pub fn num_params(specs: &[LayerSpec]) -> usize {
    specs.iter().map(|s| s.out_dim * (s.in_dim + 1)).sum()
}

/// Central differences of `f` at `p`, one coordinate at a time.
pub fn finite_difference(p: &ParamSet, h: f64, f: impl Fn(&ParamSet) -> f64) -> Vec<f64> {
    let base = p.to_flat();
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let fp = f(&p.from_flat_like(&plus).unwrap());
            let fm = f(&p.from_flat_like(&minus).unwrap());
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a − n| / max(|a|, |n|, floor)` over coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn labeled_batch(x: Matrix, labels: &[usize]) -> LabeledBatch {
    LabeledBatch::new(x, labels.iter().map(|&c| Label::Class(c)).collect()).unwrap()
}
