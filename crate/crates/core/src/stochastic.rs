//! Random functions via weight perturbation.
//!
//! A concrete generator or discriminator is drawn by perturbing the weight
//! matrices of its parameter set: `θ̃ = θ ⊙ α + β`, with `α` a Bernoulli keep
//! mask and `β` additive Gaussian noise. Biases are never perturbed. The
//! discriminator's predictive mean and variance are then Monte Carlo averages
//! over such draws.

use rand::Rng as _;
use rand_distr::{Bernoulli, StandardNormal};

use crate::data::{one_hot, Label, LabeledBatch};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::matrix::Matrix;
use crate::nn::{forward, softmax_rows, LayerSpec, ParamSet, Weights};
use crate::rng::Rng;

/// How weights are perturbed when a function is sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    /// Fraction of weights zeroed; the mask keeps each weight with
    /// probability `1 - bernoulli_drop_rate`.
    pub bernoulli_drop_rate: f64,
    /// Standard deviation of the additive weight noise.
    pub gaussian_std: f64,
}

impl DropoutSpec {
    pub const NONE: DropoutSpec = DropoutSpec {
        bernoulli_drop_rate: 0.0,
        gaussian_std: 0.0,
    };

    pub fn new(bernoulli_drop_rate: f64, gaussian_std: f64) -> Result<Self> {
        let spec = DropoutSpec {
            bernoulli_drop_rate,
            gaussian_std,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec from a noise variance instead of a standard deviation.
    pub fn with_variance(bernoulli_drop_rate: f64, gaussian_variance: f64) -> Result<Self> {
        if gaussian_variance.is_nan() || gaussian_variance < 0.0 {
            return Err(Error::arg(format!(
                "gaussian variance must be nonnegative, got {gaussian_variance}"
            )));
        }
        DropoutSpec::new(bernoulli_drop_rate, gaussian_variance.sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.bernoulli_drop_rate) {
            return Err(Error::arg(format!(
                "drop rate must lie in [0, 1], got {}",
                self.bernoulli_drop_rate
            )));
        }
        if !(self.gaussian_std >= 0.0 && self.gaussian_std.is_finite()) {
            return Err(Error::arg(format!(
                "gaussian std must be finite and nonnegative, got {}",
                self.gaussian_std
            )));
        }
        Ok(())
    }

    pub fn keep_probability(&self) -> f64 {
        1.0 - self.bernoulli_drop_rate
    }

    pub fn is_degenerate(&self) -> bool {
        self.bernoulli_drop_rate == 0.0 && self.gaussian_std == 0.0
    }
}

/// One sampled function: the base parameters after masking and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedParams {
    /// Entries in {0, 1}; bias entries are always 1.
    mask: ParamSet,
    /// Additive noise; bias entries are always 0.
    noise: ParamSet,
    effective: ParamSet,
}

impl PerturbedParams {
    /// Wraps `base` with an all-ones mask and zero noise.
    pub fn unperturbed(base: &ParamSet) -> Self {
        PerturbedParams {
            mask: base.map(|_| 1.0),
            noise: base.zeros_like(),
            effective: base.clone(),
        }
    }

    pub fn from_parts(base: &ParamSet, mask: ParamSet, noise: ParamSet) -> Result<Self> {
        base.check_congruent(&mask, "PerturbedParams mask")?;
        base.check_congruent(&noise, "PerturbedParams noise")?;
        if mask.iter().any(|v| v != 0.0 && v != 1.0) {
            return Err(Error::arg("mask entries must be 0 or 1"));
        }
        let effective = combine(base, &mask, &noise);
        Ok(PerturbedParams {
            mask,
            noise,
            effective,
        })
    }

    pub fn mask(&self) -> &ParamSet {
        &self.mask
    }

    pub fn noise(&self) -> &ParamSet {
        &self.noise
    }

    pub fn params(&self) -> &ParamSet {
        &self.effective
    }

    /// `base ⊙ mask + noise`, recomputed from scratch.
    pub fn recompute(&self, base: &ParamSet) -> Result<ParamSet> {
        base.check_congruent(&self.mask, "PerturbedParams::recompute")?;
        Ok(combine(base, &self.mask, &self.noise))
    }
}

fn combine(base: &ParamSet, mask: &ParamSet, noise: &ParamSet) -> ParamSet {
    let mut out = base.clone();
    for ((dst, m), e) in out.blocks_mut().zip(mask.blocks()).zip(noise.blocks()) {
        for ((d, &mv), &ev) in dst.iter_mut().zip(m).zip(e) {
            *d = *d * mv + ev;
        }
    }
    out
}

impl Weights for PerturbedParams {
    fn effective(&self) -> &ParamSet {
        &self.effective
    }

    fn mask(&self) -> Option<&ParamSet> {
        Some(&self.mask)
    }
}

/// Draws one concrete function around `params`.
pub fn sample_function(params: &ParamSet, spec: &DropoutSpec, rng: Rng) -> Result<PerturbedParams> {
    spec.validate()?;
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters passed to sample_function".into()));
    }
    let mut g = rng.generator();
    let keep = Bernoulli::new(spec.keep_probability()).expect("validated probability");
    let std = spec.gaussian_std;

    let mut mask = params.map(|_| 1.0);
    let mut noise = params.zeros_like();
    for (ml, nl) in mask.layers_mut().iter_mut().zip(noise.layers_mut()) {
        if spec.bernoulli_drop_rate > 0.0 {
            for m in ml.w.as_mut_slice() {
                *m = if g.sample(keep) { 1.0 } else { 0.0 };
            }
        }
        if std > 0.0 {
            for e in nl.w.as_mut_slice() {
                *e = std * g.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let effective = combine(params, &mask, &noise);
    Ok(PerturbedParams {
        mask,
        noise,
        effective,
    })
}

/// A generated batch plus the single function sample that produced it.
#[derive(Debug, Clone)]
pub struct FakeBatch {
    pub batch: LabeledBatch,
    /// The one-hot generator input the batch was produced from.
    pub input: Matrix,
    pub function: PerturbedParams,
}

/// Draws one generator function and pushes every label through it.
///
/// `num_classes` is the width of the one-hot generator input.
pub fn sample_fake_batch(
    gen_params: &ParamSet,
    gen_specs: &[LayerSpec],
    gen_spec: &DropoutSpec,
    labels: &[usize],
    num_classes: usize,
    rng: Rng,
) -> Result<FakeBatch> {
    if labels.is_empty() {
        return Err(Error::arg("cannot sample an empty fake batch"));
    }
    let input = one_hot(labels, num_classes)?;
    let function = sample_function(gen_params, gen_spec, rng)?;
    let (x, _) = forward(&function, &input, gen_specs)?;
    Ok(FakeBatch {
        batch: LabeledBatch {
            x,
            labels: labels.iter().map(|&c| Label::Class(c)).collect(),
        },
        input,
        function,
    })
}

/// Monte Carlo predictive moments of a classifier under weight perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveStats {
    pub mean: Matrix,
    pub variance: Matrix,
    pub tau: f64,
}

impl PredictiveStats {
    /// Average variance over all entries. The spread above `1/τ` is averaged
    /// separately, so a degenerate distribution reports exactly `1/τ`.
    pub fn mean_variance(&self) -> f64 {
        let v = self.variance.as_slice();
        if v.is_empty() {
            return 0.0;
        }
        let prior = 1.0 / self.tau;
        prior + v.iter().map(|x| x - prior).sum::<f64>() / v.len() as f64
    }
}

/// Predictive mean and per-class variance from `m` sampled discriminators.
///
/// The variance is `1/τ + (1/m) Σ p_c² − mean_c²`, clamped at zero. The
/// second moment about the mean is accumulated with Welford's update, so a
/// degenerate function distribution gives exactly `1/τ`.
#[allow(clippy::too_many_arguments)]
pub fn predictive_stats(
    disc_params: &ParamSet,
    disc_specs: &[LayerSpec],
    disc_spec: &DropoutSpec,
    inputs: &Matrix,
    m: usize,
    tau: f64,
    rng: Rng,
    exec: Exec,
) -> Result<PredictiveStats> {
    if m == 0 {
        return Err(Error::arg("predictive_stats needs at least one function sample"));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::arg(format!("tau must be positive and finite, got {tau}")));
    }
    let probs = exec.try_map(m, |i| -> Result<Matrix> {
        let f = sample_function(disc_params, disc_spec, rng.derive(i as u64))?;
        let (logits, _) = forward(&f, inputs, disc_specs)?;
        Ok(softmax_rows(&logits))
    })?;

    let (rows, cols) = probs[0].shape();
    let mut mean = Matrix::zeros(rows, cols);
    let mut m2 = Matrix::zeros(rows, cols);
    for (k, p) in probs.iter().enumerate() {
        let count = (k + 1) as f64;
        for ((mu, s), &x) in mean
            .as_mut_slice()
            .iter_mut()
            .zip(m2.as_mut_slice())
            .zip(p.as_slice())
        {
            let delta = x - *mu;
            *mu += delta / count;
            *s += delta * (x - *mu);
        }
    }
    let prior = 1.0 / tau;
    let inv_m = 1.0 / m as f64;
    let variance = m2.map(|s| (prior + s * inv_m).max(0.0));
    Ok(PredictiveStats {
        mean,
        variance,
        tau,
    })
}
