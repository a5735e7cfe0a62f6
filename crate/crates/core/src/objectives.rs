//! Adversarial losses, the mean-feature discrepancy, and their gradients.
//!
//! The discriminator is a `(K + 1)`-way softmax classifier: `K` real classes
//! plus one output for generated samples. For a batch of function samples
//! `f_D^{(i)}` the discriminator minimizes
//!
//! ```text
//! L_D = mean_i [ CE(f_D^{(i)}(x), y) − CE(f_D^{(i)}(x'), y') ]
//! ```
//!
//! where `y'` are the labels the generator was asked to produce. The
//! generator minimizes `CE(f_D(x'), y') + λ Δ`, with `Δ` the squared distance
//! between mean discriminator logits on real and fake batches.

use crate::data::{Label, LabeledBatch};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{backward, forward, softmax_rows, GradSet, LayerSpec};
use crate::stochastic::PerturbedParams;

/// Floor applied to every probability before taking its logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegimeKind {
    Supervised,
    SemiSupervised,
    Unsupervised,
}

impl RegimeKind {
    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::Supervised => "supervised",
            RegimeKind::SemiSupervised => "semi_supervised",
            RegimeKind::Unsupervised => "unsupervised",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "supervised" => Some(RegimeKind::Supervised),
            "semi_supervised" => Some(RegimeKind::SemiSupervised),
            "unsupervised" => Some(RegimeKind::Unsupervised),
            _ => None,
        }
    }
}

/// How dataset labels map onto discriminator outputs.
///
/// Supervised and semi-supervised regimes use `K + 1` outputs with the fake
/// class last. The unsupervised regime has two outputs: fake is 0, real is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabelRegime {
    pub kind: RegimeKind,
    pub num_classes: usize,
}

impl LabelRegime {
    pub fn new(kind: RegimeKind, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::arg("a label regime needs at least one class"));
        }
        Ok(LabelRegime { kind, num_classes })
    }

    pub fn supervised(num_classes: usize) -> Self {
        LabelRegime {
            kind: RegimeKind::Supervised,
            num_classes,
        }
    }

    pub fn semi_supervised(num_classes: usize) -> Self {
        LabelRegime {
            kind: RegimeKind::SemiSupervised,
            num_classes,
        }
    }

    pub fn unsupervised() -> Self {
        LabelRegime {
            kind: RegimeKind::Unsupervised,
            num_classes: 1,
        }
    }

    pub fn with_kind(self, kind: RegimeKind) -> Self {
        match kind {
            RegimeKind::Unsupervised => LabelRegime::unsupervised(),
            _ => LabelRegime { kind, ..self },
        }
    }

    /// Number of discriminator outputs.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            RegimeKind::Unsupervised => 2,
            _ => self.num_classes + 1,
        }
    }

    pub fn fake_class(&self) -> usize {
        match self.kind {
            RegimeKind::Unsupervised => 0,
            _ => self.num_classes,
        }
    }

    /// Width of the one-hot generator input.
    pub fn generator_classes(&self) -> usize {
        match self.kind {
            RegimeKind::Unsupervised => 1,
            _ => self.num_classes,
        }
    }

    /// Discriminator outputs that stand for real classes.
    pub fn real_outputs(&self) -> std::ops::Range<usize> {
        match self.kind {
            RegimeKind::Unsupervised => 1..2,
            _ => 0..self.num_classes,
        }
    }

    /// Discriminator target for a real example.
    pub fn real_target(&self, label: Label) -> Result<Label> {
        match (self.kind, label) {
            (RegimeKind::Unsupervised, _) => Ok(Label::Class(1)),
            (_, Label::Class(c)) if c < self.num_classes => Ok(Label::Class(c)),
            (_, Label::Class(c)) => Err(Error::arg(format!(
                "label {c} out of range for {} classes",
                self.num_classes
            ))),
            (RegimeKind::SemiSupervised, Label::Unlabeled) => Ok(Label::Unlabeled),
            (RegimeKind::Supervised, Label::Unlabeled) => Err(Error::arg(
                "unlabeled example in a supervised regime",
            )),
        }
    }

    /// Discriminator output the generator wants a sample of class `c` to hit.
    pub fn generator_target(&self, c: usize) -> Result<usize> {
        if c >= self.generator_classes() {
            return Err(Error::arg(format!(
                "generator class {c} out of range for {} classes",
                self.generator_classes()
            )));
        }
        Ok(match self.kind {
            RegimeKind::Unsupervised => 1,
            _ => c,
        })
    }

    fn real_targets(&self, labels: &[Label]) -> Result<Vec<Label>> {
        labels.iter().map(|&l| self.real_target(l)).collect()
    }

    fn generator_targets(&self, labels: &[Label]) -> Result<Vec<Label>> {
        labels
            .iter()
            .map(|&l| match l {
                Label::Class(c) => self.generator_target(c).map(Label::Class),
                Label::Unlabeled => Err(Error::arg("fake batch carries an unlabeled row")),
            })
            .collect()
    }
}

/// Mean cross-entropy over rows.
///
/// A `Label::Class(c)` row contributes `−ln p_c`. An unlabeled row contributes
/// `−ln(1 − p_fake)`, the log-probability that it is real at all.
pub fn cross_entropy(probs: &Matrix, labels: &[Label], fake_class: usize) -> Result<f64> {
    Ok(cross_entropy_with_grad(probs, labels, fake_class)?.0)
}

/// Mean cross-entropy and its gradient with respect to the logits that
/// produced `probs` through a softmax.
pub fn cross_entropy_with_grad(
    probs: &Matrix,
    labels: &[Label],
    fake_class: usize,
) -> Result<(f64, Matrix)> {
    check_rows(probs, labels)?;
    let inv_n = 1.0 / labels.len() as f64;
    weighted_cross_entropy(probs, labels, fake_class, |_| inv_n)
}

/// Like [`cross_entropy_with_grad`], but labeled and unlabeled rows are
/// averaged separately and the two means added, so a handful of labeled rows
/// in a mostly unlabeled batch keeps full weight. Equals the plain mean when
/// every row is labeled (or none is).
pub fn group_cross_entropy_with_grad(
    probs: &Matrix,
    labels: &[Label],
    fake_class: usize,
) -> Result<(f64, Matrix)> {
    check_rows(probs, labels)?;
    let unlabeled = labels.iter().filter(|l| matches!(l, Label::Unlabeled)).count();
    let labeled = labels.len() - unlabeled;
    let inv = |k: usize| if k == 0 { 0.0 } else { 1.0 / k as f64 };
    let (w_lab, w_unl) = (inv(labeled), inv(unlabeled));
    weighted_cross_entropy(probs, labels, fake_class, |l| match l {
        Label::Class(_) => w_lab,
        Label::Unlabeled => w_unl,
    })
}

fn check_rows(probs: &Matrix, labels: &[Label]) -> Result<()> {
    let n = probs.rows();
    if labels.len() != n {
        return Err(Error::dim(
            "cross_entropy",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    if n == 0 {
        return Err(Error::arg("cross_entropy of an empty batch"));
    }
    Ok(())
}

fn weighted_cross_entropy(
    probs: &Matrix,
    labels: &[Label],
    fake_class: usize,
    weight: impl Fn(Label) -> f64,
) -> Result<(f64, Matrix)> {
    let (n, c) = probs.shape();
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, c);
    for (i, &label) in labels.iter().enumerate() {
        let p = probs.row(i);
        let g = grad.row_mut(i);
        let w = weight(label);
        match label {
            Label::Class(t) => {
                if t >= c {
                    return Err(Error::arg(format!("label {t} out of range for {c} outputs")));
                }
                let pt = p[t];
                loss -= w * pt.max(PROB_FLOOR).ln();
                if pt >= PROB_FLOOR {
                    for (gj, &pj) in g.iter_mut().zip(p) {
                        *gj = pj * w;
                    }
                    g[t] -= w;
                }
            }
            Label::Unlabeled => {
                if fake_class >= c {
                    return Err(Error::arg(format!(
                        "fake class {fake_class} out of range for {c} outputs"
                    )));
                }
                let real_mass: f64 = p
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != fake_class)
                    .map(|(_, &v)| v)
                    .sum();
                loss -= w * real_mass.max(PROB_FLOOR).ln();
                if real_mass >= PROB_FLOOR {
                    let inv_s = 1.0 / real_mass;
                    for (j, (gj, &pj)) in g.iter_mut().zip(p).enumerate() {
                        let q = if j == fake_class { 0.0 } else { pj * inv_s };
                        *gj = (pj - q) * w;
                    }
                }
            }
        }
    }
    Ok((loss, grad))
}

/// `‖mean(real) − mean(fake)‖²` over feature rows.
pub fn mean_discrepancy(real_features: &Matrix, fake_features: &Matrix) -> Result<f64> {
    Ok(mean_difference(real_features, fake_features)?
        .iter()
        .map(|d| d * d)
        .sum())
}

/// `mean(real) − mean(fake)`, column-wise.
fn mean_difference(real: &Matrix, fake: &Matrix) -> Result<Vec<f64>> {
    if real.rows() == 0 || fake.rows() == 0 {
        return Err(Error::arg("discrepancy needs two nonempty batches"));
    }
    if real.cols() != fake.cols() {
        return Err(Error::dim(
            "mean_discrepancy",
            format!("{} vs {} feature columns", real.cols(), fake.cols()),
        ));
    }
    Ok(real
        .column_means()
        .iter()
        .zip(fake.column_means())
        .map(|(r, f)| r - f)
        .collect())
}

/// Mean-feature discrepancy under one sampled discriminator, using its
/// final-layer logits as the feature map.
pub fn mmd_delta(
    disc_fn: &PerturbedParams,
    disc_specs: &[LayerSpec],
    real_x: &Matrix,
    fake_x: &Matrix,
) -> Result<f64> {
    if real_x.rows() == 0 || fake_x.rows() == 0 {
        return Err(Error::arg("discrepancy needs two nonempty batches"));
    }
    let (_, real_tape) = forward(disc_fn, real_x, disc_specs)?;
    let (_, fake_tape) = forward(disc_fn, fake_x, disc_specs)?;
    mean_discrepancy(real_tape.last_pre_activation(), fake_tape.last_pre_activation())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiscriminatorLoss {
    /// Mean cross-entropy of real examples against their targets.
    pub l_d_real: f64,
    /// Mean cross-entropy of fakes against their intended labels (subtracted).
    pub l_d_fake_term: f64,
    /// Mean cross-entropy of fakes against the fake class (added when enabled).
    pub l_d_fake_class: f64,
    pub total_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeneratorLoss {
    pub l_g: f64,
    pub mmd: f64,
    pub total_g: f64,
}

/// Per-iteration loss summary.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub l_d_real: f64,
    pub l_d_fake_term: f64,
    pub l_d_fake_class: f64,
    pub l_g: f64,
    pub mmd: f64,
    pub total_d: f64,
    pub total_g: f64,
}

impl LossReport {
    pub fn new(d: DiscriminatorLoss, g: GeneratorLoss) -> Self {
        LossReport {
            l_d_real: d.l_d_real,
            l_d_fake_term: d.l_d_fake_term,
            l_d_fake_class: d.l_d_fake_class,
            l_g: g.l_g,
            mmd: g.mmd,
            total_d: d.total_d,
            total_g: g.total_g,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l_d_real,
            self.l_d_fake_term,
            self.l_d_fake_class,
            self.l_g,
            self.mmd,
            self.total_d,
            self.total_g,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DiscriminatorOptions {
    /// Also train fakes toward the fake output.
    pub fake_class_term: bool,
}

/// Discriminator loss averaged over the sampled functions `disc_fns`, with
/// its gradient with respect to the unperturbed discriminator parameters.
///
/// The fake batch is treated as constant input.
pub fn discriminator_loss(
    disc_fns: &[PerturbedParams],
    disc_specs: &[LayerSpec],
    regime: &LabelRegime,
    real: &LabeledBatch,
    fake: &LabeledBatch,
    options: DiscriminatorOptions,
) -> Result<(DiscriminatorLoss, GradSet)> {
    if disc_fns.is_empty() {
        return Err(Error::arg("discriminator_loss needs at least one function sample"));
    }
    check_output_dim(disc_specs, regime)?;
    let real_targets = regime.real_targets(&real.labels)?;
    let fake_targets = regime.generator_targets(&fake.labels)?;
    let fake_class_targets = vec![Label::Class(regime.fake_class()); fake.len()];
    let fake_class = regime.fake_class();

    let inv_m = 1.0 / disc_fns.len() as f64;
    let mut report = DiscriminatorLoss::default();
    let mut grad: Option<GradSet> = None;
    for f in disc_fns {
        let (real_logits, real_tape) = forward(f, &real.x, disc_specs)?;
        let (l_real, g_real) =
            group_cross_entropy_with_grad(&softmax_rows(&real_logits), &real_targets, fake_class)?;
        let (gp_real, _) = backward(&real_tape, &g_real)?;

        let (fake_logits, fake_tape) = forward(f, &fake.x, disc_specs)?;
        let fake_probs = softmax_rows(&fake_logits);
        let (l_fake, g_fake) = cross_entropy_with_grad(&fake_probs, &fake_targets, fake_class)?;
        let mut g_fake_logits = g_fake;
        g_fake_logits.scale(-1.0);
        let mut l_fake_class = 0.0;
        if options.fake_class_term {
            let (l, g) = cross_entropy_with_grad(&fake_probs, &fake_class_targets, fake_class)?;
            l_fake_class = l;
            g_fake_logits.add_scaled(1.0, &g)?;
        }
        let (gp_fake, _) = backward(&fake_tape, &g_fake_logits)?;

        report.l_d_real += l_real * inv_m;
        report.l_d_fake_term += l_fake * inv_m;
        report.l_d_fake_class += l_fake_class * inv_m;

        let acc = grad.get_or_insert_with(|| gp_real.zeros_like());
        acc.add_scaled(inv_m, &gp_real)?;
        acc.add_scaled(inv_m, &gp_fake)?;
    }
    report.total_d = report.l_d_real - report.l_d_fake_term + report.l_d_fake_class;
    Ok((report, grad.expect("at least one sample")))
}

/// Generator loss for one generator function and one discriminator function,
/// with its gradient with respect to the unperturbed generator parameters.
///
/// The fake batch is regenerated from `gen_fn` on the one-hot encoding of
/// `fake_labels`, so the gradient flows through the generator. Discriminator
/// parameters are held fixed.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss(
    disc_fn: &PerturbedParams,
    disc_specs: &[LayerSpec],
    gen_fn: &PerturbedParams,
    gen_specs: &[LayerSpec],
    regime: &LabelRegime,
    real: &LabeledBatch,
    fake_labels: &[usize],
    lambda: f64,
) -> Result<(GeneratorLoss, GradSet)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::arg(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    if fake_labels.is_empty() {
        return Err(Error::arg("generator_loss needs a nonempty fake batch"));
    }
    check_output_dim(disc_specs, regime)?;
    let targets = fake_labels
        .iter()
        .map(|&c| regime.generator_target(c).map(Label::Class))
        .collect::<Result<Vec<_>>>()?;

    let input = crate::data::one_hot(fake_labels, regime.generator_classes())?;
    let (fake_x, gen_tape) = forward(gen_fn, &input, gen_specs)?;
    let (fake_logits, fake_tape) = forward(disc_fn, &fake_x, disc_specs)?;
    let (l_g, mut g_logits) =
        cross_entropy_with_grad(&softmax_rows(&fake_logits), &targets, regime.fake_class())?;

    let (_, real_tape) = forward(disc_fn, &real.x, disc_specs)?;
    let diff = mean_difference(real_tape.last_pre_activation(), &fake_logits)?;
    let mmd: f64 = diff.iter().map(|d| d * d).sum();
    if lambda > 0.0 {
        // dΔ/d(fake logit row) = −2 (μ_real − μ_fake) / n'
        let scale = -2.0 * lambda / fake_labels.len() as f64;
        for i in 0..g_logits.rows() {
            for (g, d) in g_logits.row_mut(i).iter_mut().zip(&diff) {
                *g += scale * d;
            }
        }
    }

    let (_, g_fake_x) = backward(&fake_tape, &g_logits)?;
    let (g_omega, _) = backward(&gen_tape, &g_fake_x)?;
    Ok((
        GeneratorLoss {
            l_g,
            mmd,
            total_g: l_g + lambda * mmd,
        },
        g_omega,
    ))
}

fn check_output_dim(disc_specs: &[LayerSpec], regime: &LabelRegime) -> Result<()> {
    let out = disc_specs.last().map_or(0, |s| s.out_dim);
    if out != regime.output_dim() {
        return Err(Error::dim(
            "discriminator output",
            format!("{out} outputs, regime needs {}", regime.output_dim()),
        ));
    }
    Ok(())
}
