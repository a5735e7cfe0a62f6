//! Training loops: MAP with Monte Carlo function sampling, and stochastic
//! gradient Langevin dynamics.
//!
//! One iteration:
//!
//! 1. draw a fake batch from one generator function sample;
//! 2. for each of `m` discriminator function samples, compute the
//!    discriminator gradient at the perturbed weights, pulled back to `θ`;
//! 3. step `θ` along the summed gradient, then project it onto `‖θ‖ ≤ 1`;
//! 4. `gen_rounds` times: for each of `m'` generator samples, regenerate a
//!    fake batch and compute the generator gradient against a fresh
//!    discriminator sample; step `ω` along the summed gradient.
//!
//! The Langevin variant halves the step and adds `N(0, γ·η_t)` noise to every
//! coordinate after each update. Monte Carlo samples inside a step are
//! evaluated through [`Exec`] with per-sample RNG streams and summed in sample
//! order, so results do not depend on the execution mode.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::data::{balanced_labels, batch_indices, Dataset, LabeledBatch};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{mlp, weight_normalize_scoped, Activation, GradSet, LayerSpec, NormScope, ParamSet};
use crate::objectives::{
    discriminator_loss, generator_loss, DiscriminatorLoss, DiscriminatorOptions, GeneratorLoss,
    LabelRegime, LossReport,
};
use crate::rng::Rng;
use crate::stochastic::{sample_fake_batch, sample_function, DropoutSpec};

const TAG_INIT_DISC: u64 = 1;
const TAG_INIT_GEN: u64 = 2;
const TAG_ITERATION: u64 = 3;
const TAG_SHUFFLE: u64 = 4;

const TAG_FAKE_FOR_DISC: u64 = 0;
const TAG_DISC_SAMPLES: u64 = 1;
const TAG_GEN_ROUNDS: u64 = 2;
const TAG_NOISE_DISC: u64 = 3;
const TAG_NOISE_GEN: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Inference {
    #[default]
    MapMc,
    Sgld,
}

impl Inference {
    pub fn name(self) -> &'static str {
        match self {
            Inference::MapMc => "map_mc",
            Inference::Sgld => "sgld",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "map_mc" => Some(Inference::MapMc),
            "sgld" => Some(Inference::Sgld),
            _ => None,
        }
    }
}

/// Learning rate for an epoch: constant for MAP-MC, `η₀ / (1 + epoch)` for SGLD.
pub fn lr_schedule(eta0: f64, epoch: usize, mode: Inference) -> f64 {
    match mode {
        Inference::MapMc => eta0,
        Inference::Sgld => eta0 / (1.0 + epoch as f64),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta0: f64,
    /// Weight of the mean-feature discrepancy in the generator loss.
    pub lambda: f64,
    pub disc_dropout: DropoutSpec,
    pub gen_dropout: DropoutSpec,
    /// Discriminator function samples per iteration.
    pub m: usize,
    /// Generator function samples per generator round.
    pub m_prime: usize,
    /// Generator update passes per discriminator update.
    pub gen_rounds: usize,
    pub batch_real: usize,
    pub batch_fake: usize,
    pub epochs: usize,
    pub inference: Inference,
    /// Scales the Langevin noise variance `η_t` down to `γ·η_t`.
    pub sgld_noise_scale: f64,
    pub tau: f64,
    pub seed: u64,
    /// Add cross-entropy of fakes against the fake output to the
    /// discriminator loss. Off by default.
    pub fake_class_term: bool,
    pub norm_scope: NormScope,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta0: 0.01,
            lambda: 1.0,
            disc_dropout: DropoutSpec {
                bernoulli_drop_rate: 0.05,
                gaussian_std: 0.9f64.sqrt(),
            },
            gen_dropout: DropoutSpec {
                bernoulli_drop_rate: 0.1,
                gaussian_std: 0.9f64.sqrt(),
            },
            m: 2,
            m_prime: 2,
            gen_rounds: 2,
            batch_real: 100,
            batch_fake: 100,
            epochs: 200,
            inference: Inference::MapMc,
            sgld_noise_scale: 0.1,
            tau: 100.0,
            seed: 0,
            fake_class_term: false,
            norm_scope: NormScope::Global,
            exec: Exec::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::arg(format!("{name} must be positive, got {v}")))
            }
        };
        let nonneg = |v: f64, name: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::arg(format!("{name} must be nonnegative, got {v}")))
            }
        };
        nonneg(self.eta0, "eta0")?;
        nonneg(self.lambda, "lambda")?;
        nonneg(self.sgld_noise_scale, "sgld_noise_scale")?;
        positive(self.tau, "tau")?;
        self.disc_dropout.validate()?;
        self.gen_dropout.validate()?;
        for (v, name) in [
            (self.m, "m"),
            (self.m_prime, "m_prime"),
            (self.gen_rounds, "gen_rounds"),
            (self.batch_real, "batch_real"),
            (self.batch_fake, "batch_fake"),
        ] {
            if v == 0 {
                return Err(Error::arg(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Architectures of both networks plus the label regime they serve.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub regime: LabelRegime,
    pub disc_specs: Vec<LayerSpec>,
    pub gen_specs: Vec<LayerSpec>,
}

impl Model {
    /// Softplus hidden layers in both networks; identity discriminator
    /// output (logits) and a caller-chosen generator output activation.
    pub fn new(
        regime: LabelRegime,
        data_dim: usize,
        disc_hidden: &[usize],
        gen_hidden: &[usize],
        gen_output: Activation,
    ) -> Result<Self> {
        let mut dw = vec![data_dim];
        dw.extend_from_slice(disc_hidden);
        dw.push(regime.output_dim());
        let mut gw = vec![regime.generator_classes()];
        gw.extend_from_slice(gen_hidden);
        gw.push(data_dim);
        Ok(Model {
            regime,
            disc_specs: mlp(&dw, Activation::Softplus, Activation::Identity)?,
            gen_specs: mlp(&gw, Activation::Softplus, gen_output)?,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.disc_specs[0].in_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    /// Discriminator parameters.
    pub theta: ParamSet,
    /// Generator parameters.
    pub omega: ParamSet,
    /// Completed epochs.
    pub epoch: usize,
    pub iteration: u64,
    pub rng: Rng,
    pub history: Vec<LossReport>,
}

impl TrainState {
    pub fn init(model: Model, seed: u64) -> Self {
        let rng = Rng::from_seed(seed);
        let theta = ParamSet::init(&model.disc_specs, rng.derive(TAG_INIT_DISC));
        let omega = ParamSet::init(&model.gen_specs, rng.derive(TAG_INIT_GEN));
        TrainState {
            model,
            theta,
            omega,
            epoch: 0,
            iteration: 0,
            rng,
            history: Vec::new(),
        }
    }

    pub fn from_params(model: Model, theta: ParamSet, omega: ParamSet, seed: u64) -> Result<Self> {
        theta.check_specs(&model.disc_specs)?;
        omega.check_specs(&model.gen_specs)?;
        Ok(TrainState {
            model,
            theta,
            omega,
            epoch: 0,
            iteration: 0,
            rng: Rng::from_seed(seed),
            history: Vec::new(),
        })
    }
}

/// How a summed gradient is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateRule {
    /// Multiplier on the summed gradient.
    pub step: f64,
    /// Variance of the Gaussian noise added to every coordinate.
    pub noise_variance: f64,
}

impl UpdateRule {
    pub fn for_mode(mode: Inference, eta_t: f64, noise_scale: f64) -> Self {
        match mode {
            Inference::MapMc => UpdateRule {
                step: eta_t,
                noise_variance: 0.0,
            },
            Inference::Sgld => UpdateRule {
                step: eta_t / 2.0,
                noise_variance: noise_scale * eta_t,
            },
        }
    }

    /// `params − step·grad_sum + N(0, noise_variance)`.
    pub fn apply(&self, params: &mut ParamSet, grad_sum: &GradSet, rng: Rng) -> Result<()> {
        params.add_scaled(-self.step, grad_sum)?;
        if self.noise_variance > 0.0 {
            let std = self.noise_variance.sqrt();
            let mut g = rng.generator();
            for block in params.blocks_mut() {
                for v in block {
                    *v += std * g.sample::<f64, _>(StandardNormal);
                }
            }
        }
        Ok(())
    }
}

fn sum_in_order(grads: &[GradSet]) -> Result<GradSet> {
    let mut acc = grads
        .first()
        .ok_or_else(|| Error::arg("no gradients to sum"))?
        .clone();
    for g in &grads[1..] {
        acc.add_scaled(1.0, g)?;
    }
    Ok(acc)
}

/// One MAP-MC iteration.
pub fn train_step_mapmc(state: &mut TrainState, real: &LabeledBatch, cfg: &TrainConfig) -> Result<()> {
    train_step(state, real, cfg, Inference::MapMc)
}

/// One Langevin iteration.
pub fn train_step_sgld(state: &mut TrainState, real: &LabeledBatch, cfg: &TrainConfig) -> Result<()> {
    train_step(state, real, cfg, Inference::Sgld)
}

/// One iteration in the given mode, at the learning rate of `state.epoch`.
pub fn train_step(
    state: &mut TrainState,
    real: &LabeledBatch,
    cfg: &TrainConfig,
    mode: Inference,
) -> Result<()> {
    cfg.validate()?;
    if real.is_empty() {
        return Err(Error::arg("empty real batch"));
    }
    let model = &state.model;
    let regime = model.regime;
    let iteration = state.iteration;
    let diverged = |what: &'static str| Error::Diverged { iteration, what };

    let eta_t = lr_schedule(cfg.eta0, state.epoch, mode);
    let rule = UpdateRule::for_mode(mode, eta_t, cfg.sgld_noise_scale);
    let r = state.rng.derive(TAG_ITERATION).derive(iteration);
    let fake_labels = balanced_labels(cfg.batch_fake, regime.generator_classes());

    // discriminator
    let fake = sample_fake_batch(
        &state.omega,
        &model.gen_specs,
        &cfg.gen_dropout,
        &fake_labels,
        regime.generator_classes(),
        r.derive(TAG_FAKE_FOR_DISC),
    )?
    .batch;
    let options = DiscriminatorOptions {
        fake_class_term: cfg.fake_class_term,
    };
    let theta = &state.theta;
    let disc_rng = r.derive(TAG_DISC_SAMPLES);
    let per_sample = cfg.exec.try_map(cfg.m, |j| -> Result<(DiscriminatorLoss, GradSet)> {
        let f = sample_function(theta, &cfg.disc_dropout, disc_rng.derive(j as u64))?;
        discriminator_loss(std::slice::from_ref(&f), &model.disc_specs, &regime, real, &fake, options)
    })?;
    let (d_losses, d_grads): (Vec<_>, Vec<_>) = per_sample.into_iter().unzip();
    let d_loss = mean_disc(&d_losses);
    if ![d_loss.total_d, d_loss.l_d_real, d_loss.l_d_fake_term].iter().all(|v| v.is_finite()) {
        return Err(diverged("discriminator loss"));
    }
    let mut new_theta = state.theta.clone();
    rule.apply(&mut new_theta, &sum_in_order(&d_grads)?, r.derive(TAG_NOISE_DISC))?;
    if !new_theta.is_finite() {
        return Err(diverged("discriminator parameters"));
    }
    let new_theta = weight_normalize_scoped(&new_theta, cfg.norm_scope)?;

    // generator
    let mut new_omega = state.omega.clone();
    let mut g_losses = Vec::with_capacity(cfg.gen_rounds * cfg.m_prime);
    for round in 0..cfg.gen_rounds {
        let round_rng = r.derive(TAG_GEN_ROUNDS).derive(round as u64);
        let omega = &new_omega;
        let theta = &new_theta;
        let per_sample = cfg.exec.try_map(cfg.m_prime, |j| -> Result<(GeneratorLoss, GradSet)> {
            let sr = round_rng.derive(j as u64);
            let gen_fn = sample_function(omega, &cfg.gen_dropout, sr.derive(0))?;
            let disc_fn = sample_function(theta, &cfg.disc_dropout, sr.derive(1))?;
            generator_loss(
                &disc_fn,
                &model.disc_specs,
                &gen_fn,
                &model.gen_specs,
                &regime,
                real,
                &fake_labels,
                cfg.lambda,
            )
        })?;
        let (losses, grads): (Vec<_>, Vec<_>) = per_sample.into_iter().unzip();
        if !losses.iter().all(|l| l.total_g.is_finite()) {
            return Err(diverged("generator loss"));
        }
        g_losses.extend(losses);
        let grad_sum = sum_in_order(&grads)?;
        rule.apply(
            &mut new_omega,
            &grad_sum,
            r.derive(TAG_NOISE_GEN).derive(round as u64),
        )?;
        if !new_omega.is_finite() {
            return Err(diverged("generator parameters"));
        }
    }

    state.theta = new_theta;
    state.omega = new_omega;
    state.iteration += 1;
    state
        .history
        .push(LossReport::new(d_loss, mean_gen(&g_losses)));
    Ok(())
}

fn mean_disc(losses: &[DiscriminatorLoss]) -> DiscriminatorLoss {
    let inv = 1.0 / losses.len() as f64;
    let mut out = DiscriminatorLoss::default();
    for l in losses {
        out.l_d_real += l.l_d_real * inv;
        out.l_d_fake_term += l.l_d_fake_term * inv;
        out.l_d_fake_class += l.l_d_fake_class * inv;
    }
    out.total_d = out.l_d_real - out.l_d_fake_term + out.l_d_fake_class;
    out
}

fn mean_gen(losses: &[GeneratorLoss]) -> GeneratorLoss {
    let inv = 1.0 / losses.len() as f64;
    let mut out = GeneratorLoss::default();
    for l in losses {
        out.l_g += l.l_g * inv;
        out.mmd += l.mmd * inv;
        out.total_g += l.total_g * inv;
    }
    out
}

/// What a sink sees at the end of each epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    /// Number of completed epochs, starting at 1.
    pub epoch: usize,
    pub iteration: u64,
    /// Mean of the epoch's per-iteration loss reports.
    pub losses: LossReport,
    /// Learning rate used during the epoch.
    pub eta: f64,
}

pub trait MetricSink {
    fn on_epoch(&mut self, state: &TrainState, summary: &EpochSummary) -> Result<()>;
}

impl<F> MetricSink for F
where
    F: FnMut(&TrainState, &EpochSummary) -> Result<()>,
{
    fn on_epoch(&mut self, state: &TrainState, summary: &EpochSummary) -> Result<()> {
        self(state, summary)
    }
}

/// Initializes both networks from `cfg.seed` and trains for `cfg.epochs`.
pub fn fit(
    data: &Dataset,
    model: Model,
    cfg: &TrainConfig,
    sinks: &mut [&mut dyn MetricSink],
) -> Result<TrainState> {
    let state = TrainState::init(model, cfg.seed);
    fit_from(state, data, cfg, sinks)
}

/// Continues training `state` until it has completed `cfg.epochs` epochs.
pub fn fit_from(
    mut state: TrainState,
    data: &Dataset,
    cfg: &TrainConfig,
    sinks: &mut [&mut dyn MetricSink],
) -> Result<TrainState> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::arg("cannot train on an empty dataset"));
    }
    if data.dim() != state.model.data_dim() {
        return Err(Error::dim(
            "fit",
            format!("data has {} features, model expects {}", data.dim(), state.model.data_dim()),
        ));
    }
    if cfg.epochs > state.epoch && data.len() < cfg.batch_real {
        return Err(Error::arg(format!(
            "dataset of {} rows is smaller than one batch of {}",
            data.len(),
            cfg.batch_real
        )));
    }
    while state.epoch < cfg.epochs {
        let eta = lr_schedule(cfg.eta0, state.epoch, cfg.inference);
        let shuffle = state.rng.derive(TAG_SHUFFLE).derive(state.epoch as u64);
        let first = state.history.len();
        for idx in batch_indices(data.len(), cfg.batch_real, shuffle)? {
            let batch = data.select(&idx);
            train_step(&mut state, &batch, cfg, cfg.inference)?;
        }
        state.epoch += 1;
        let summary = EpochSummary {
            epoch: state.epoch,
            iteration: state.iteration,
            losses: mean_report(&state.history[first..]),
            eta,
        };
        for sink in sinks.iter_mut() {
            sink.on_epoch(&state, &summary)?;
        }
    }
    Ok(state)
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    if reports.is_empty() {
        return LossReport::default();
    }
    let inv = 1.0 / reports.len() as f64;
    let mut out = LossReport::default();
    for r in reports {
        out.l_d_real += r.l_d_real * inv;
        out.l_d_fake_term += r.l_d_fake_term * inv;
        out.l_d_fake_class += r.l_d_fake_class * inv;
        out.l_g += r.l_g * inv;
        out.mmd += r.mmd * inv;
        out.total_d += r.total_d * inv;
        out.total_g += r.total_g * inv;
    }
    out
}
