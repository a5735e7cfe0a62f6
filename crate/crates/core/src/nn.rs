//! Fully connected networks with exact manual reverse-mode gradients.
//!
//! A network is an architecture (`&[LayerSpec]`) plus a [`ParamSet`]. Each
//! layer computes `a_k = act(a_{k-1} · W_kᵀ + b_kᵀ)` on a batch laid out one
//! example per row. [`forward`] records the per-layer inputs and
//! pre-activations on a [`ForwardTape`]; [`backward`] replays it in reverse.
//!
//! Forward passes can run on plain parameters or on a perturbed copy (see
//! [`crate::stochastic::PerturbedParams`]). In the latter case gradients are
//! pulled back to the unperturbed parameters through the dropout mask.

use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Softplus,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Softplus => softplus(z),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative at pre-activation `z`, given the already computed output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Softplus => sigmoid(z),
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Softplus => "softplus",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "softplus" => Some(Activation::Softplus),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Builds a chain of layers: `widths = [in, h1, ..., out]`, hidden layers use
/// `hidden`, the last uses `output`.
pub fn mlp(widths: &[usize], hidden: Activation, output: Activation) -> Result<Vec<LayerSpec>> {
    if widths.len() < 2 {
        return Err(Error::arg("an MLP needs at least input and output widths"));
    }
    if let Some(i) = widths.iter().position(|&w| w == 0) {
        return Err(Error::arg(format!("layer width {i} is zero")));
    }
    let last = widths.len() - 2;
    Ok(widths
        .windows(2)
        .enumerate()
        .map(|(k, w)| LayerSpec::new(w[0], w[1], if k == last { output } else { hidden }))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out_dim × in_dim`
    pub w: Matrix,
    /// `out_dim × 1`
    pub b: Matrix,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            w: Matrix::zeros(out_dim, in_dim),
            b: Matrix::zeros(out_dim, 1),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }
}

/// Weights and biases of one network, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layers: Vec<Layer>,
}

/// Gradients have exactly the layout of the parameters they differentiate.
pub type GradSet = ParamSet;

impl ParamSet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for (k, l) in layers.iter().enumerate() {
            if l.b.shape() != (l.out_dim(), 1) {
                return Err(Error::dim(
                    format!("layer {k}"),
                    format!("bias {:?} for weight {:?}", l.b.shape(), l.w.shape()),
                ));
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dim(
                    format!("layer {}", k + 1),
                    format!(
                        "previous layer emits {} features, this one takes {}",
                        pair[0].out_dim(),
                        pair[1].in_dim()
                    ),
                ));
            }
        }
        Ok(ParamSet { layers })
    }

    pub fn zeros(specs: &[LayerSpec]) -> Self {
        ParamSet {
            layers: specs
                .iter()
                .map(|s| Layer::zeros(s.in_dim, s.out_dim))
                .collect(),
        }
    }

    /// Fan-balanced uniform init: `W ~ U[-s, s]`, `s = sqrt(6 / (in + out))`, zero biases.
    pub fn init(specs: &[LayerSpec], rng: Rng) -> Self {
        let mut g = rng.generator();
        let mut params = ParamSet::zeros(specs);
        for (layer, spec) in params.layers.iter_mut().zip(specs) {
            let s = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            let dist = Uniform::new_inclusive(-s, s).expect("finite bounds");
            for w in layer.w.as_mut_slice() {
                *w = dist.sample(&mut g);
            }
        }
        params
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_| 0.0)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn total_dim(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All entries as one slice per block: `W_0, b_0, W_1, b_1, ...`.
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice(), l.b.as_slice()])
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.blocks().flat_map(|b| b.iter().copied())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().collect()
    }

    pub fn from_flat_like(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.total_dim() {
            return Err(Error::dim(
                "ParamSet::from_flat_like",
                format!("{} values for {} parameters", flat.len(), self.total_dim()),
            ));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for block in out.blocks_mut() {
            block.copy_from_slice(&flat[offset..offset + block.len()]);
            offset += block.len();
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: l.w.map(&f),
                    b: l.b.map(&f),
                })
                .collect(),
        }
    }

    /// Element-wise combination of two congruent sets.
    pub fn zip_map(&self, other: &ParamSet, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_congruent(other, "ParamSet::zip_map")?;
        let mut out = self.clone();
        for (dst, src) in out.blocks_mut().zip(other.blocks()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = f(*d, s);
            }
        }
        Ok(out)
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &ParamSet) -> Result<()> {
        self.check_congruent(other, "ParamSet::add_scaled")?;
        for (dst, src) in self.blocks_mut().zip(other.blocks()) {
            axpy(alpha, src, dst);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.blocks().map(|b| dot(b, b)).sum()
    }

    /// Global Euclidean norm over every weight and bias.
    pub fn norm(&self) -> f64 {
        self.sum_of_squares().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs_diff(&self, other: &ParamSet) -> Result<f64> {
        self.check_congruent(other, "ParamSet::max_abs_diff")?;
        Ok(self
            .iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_congruent(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.w.shape() == b.w.shape())
    }

    pub(crate) fn check_congruent(&self, other: &ParamSet, context: &str) -> Result<()> {
        if !self.is_congruent(other) {
            return Err(Error::dim(context, "parameter sets have different layouts"));
        }
        Ok(())
    }

    /// Checks the parameters against an architecture.
    pub fn check_specs(&self, specs: &[LayerSpec]) -> Result<()> {
        if specs.len() != self.layers.len() {
            return Err(Error::dim(
                "network",
                format!("{} layer specs for {} parameter layers", specs.len(), self.layers.len()),
            ));
        }
        for (k, (l, s)) in self.layers.iter().zip(specs).enumerate() {
            if l.w.shape() != (s.out_dim, s.in_dim) {
                return Err(Error::dim(
                    format!("layer {k}"),
                    format!(
                        "weights are {:?}, spec wants {}x{}",
                        l.w.shape(),
                        s.out_dim,
                        s.in_dim
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Where the norm projection applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormScope {
    /// One norm over every parameter of the network.
    #[default]
    Global,
    /// Only the final layer's weights and bias.
    LastLayer,
}

impl NormScope {
    pub fn name(self) -> &'static str {
        match self {
            NormScope::Global => "global",
            NormScope::LastLayer => "last_layer",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "global" => Some(NormScope::Global),
            "last_layer" => Some(NormScope::LastLayer),
            _ => None,
        }
    }
}

/// A norm this close to 1 is rounding error from a previous projection;
/// treating it as feasible makes the projection exactly idempotent.
const NORM_SLACK: f64 = 1.0 + 4.0 * f64::EPSILON;

/// Projects the parameters onto the unit ball: unchanged if the norm is at
/// most 1, otherwise every entry is divided by the norm.
pub fn weight_normalize(params: &ParamSet) -> Result<ParamSet> {
    weight_normalize_scoped(params, NormScope::Global)
}

pub fn weight_normalize_scoped(params: &ParamSet, scope: NormScope) -> Result<ParamSet> {
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters passed to weight_normalize".into()));
    }
    let mut out = params.clone();
    match scope {
        NormScope::Global => {
            let norm = params.norm();
            if norm > NORM_SLACK {
                for block in out.blocks_mut() {
                    block.iter_mut().for_each(|v| *v /= norm);
                }
            }
        }
        NormScope::LastLayer => {
            if let Some(last) = out.layers.last_mut() {
                let norm = (last.w.sum_of_squares() + last.b.sum_of_squares()).sqrt();
                if norm > NORM_SLACK {
                    last.w.as_mut_slice().iter_mut().for_each(|v| *v /= norm);
                    last.b.as_mut_slice().iter_mut().for_each(|v| *v /= norm);
                }
            }
        }
    }
    Ok(out)
}

/// Anything a forward pass can run on.
pub trait Weights {
    /// The parameters actually used in the affine maps.
    fn effective(&self) -> &ParamSet;
    /// Multiplicative mask applied to the base parameters, if any. Gradients
    /// with respect to the base are the effective gradients times this mask.
    fn mask(&self) -> Option<&ParamSet>;
}

impl Weights for ParamSet {
    fn effective(&self) -> &ParamSet {
        self
    }

    fn mask(&self) -> Option<&ParamSet> {
        None
    }
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Debug)]
pub struct ForwardTape<'a> {
    params: &'a ParamSet,
    mask: Option<&'a ParamSet>,
    specs: Vec<LayerSpec>,
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
    output: Matrix,
}

impl ForwardTape<'_> {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    /// Pre-activation of the final layer (the logits, for a classifier).
    pub fn last_pre_activation(&self) -> &Matrix {
        self.pre.last().expect("tape of a non-empty network")
    }
}

pub fn forward<'a, W: Weights + ?Sized>(
    params: &'a W,
    input: &Matrix,
    specs: &[LayerSpec],
) -> Result<(Matrix, ForwardTape<'a>)> {
    let effective = params.effective();
    if specs.is_empty() {
        return Err(Error::arg("network has no layers"));
    }
    effective.check_specs(specs)?;
    if input.cols() != specs[0].in_dim {
        return Err(Error::dim(
            "layer 0",
            format!("input has {} columns, layer expects {}", input.cols(), specs[0].in_dim),
        ));
    }
    let mut inputs = Vec::with_capacity(specs.len());
    let mut pre = Vec::with_capacity(specs.len());
    let mut a = input.clone();
    for (layer, spec) in effective.layers.iter().zip(specs) {
        let mut z = a.matmul_transposed(&layer.w)?;
        let bias = layer.b.as_slice();
        for i in 0..z.rows() {
            for (v, &bj) in z.row_mut(i).iter_mut().zip(bias) {
                *v += bj;
            }
        }
        let next = match spec.activation {
            Activation::Identity => z.clone(),
            act => z.map(|v| act.apply(v)),
        };
        inputs.push(a);
        pre.push(z);
        a = next;
    }
    let tape = ForwardTape {
        params: effective,
        mask: params.mask(),
        specs: specs.to_vec(),
        inputs,
        pre,
        output: a.clone(),
    };
    Ok((a, tape))
}

/// Gradients of a scalar loss whose gradient with respect to the network
/// output is `out_grad`. Returns `(parameter gradient, input gradient)`.
pub fn backward(tape: &ForwardTape<'_>, out_grad: &Matrix) -> Result<(GradSet, Matrix)> {
    if out_grad.shape() != tape.output.shape() {
        return Err(Error::dim(
            "backward",
            format!(
                "output gradient {:?} for output {:?}",
                out_grad.shape(),
                tape.output.shape()
            ),
        ));
    }
    let n = tape.specs.len();
    let mut layers: Vec<Layer> = Vec::with_capacity(n);
    let mut upstream = out_grad.clone();
    for k in (0..n).rev() {
        let spec = tape.specs[k];
        let z = &tape.pre[k];
        // dL/dz = dL/da ⊙ act'(z)
        let mut dz = upstream;
        if spec.activation != Activation::Identity {
            let a_out = if k + 1 < n { &tape.inputs[k + 1] } else { &tape.output };
            for ((g, &zv), &av) in dz
                .as_mut_slice()
                .iter_mut()
                .zip(z.as_slice())
                .zip(a_out.as_slice())
            {
                *g *= spec.activation.derivative(zv, av);
            }
        }
        let dw = dz.transposed_matmul(&tape.inputs[k])?;
        let db = Matrix::from_vec(spec.out_dim, 1, dz.column_sums())?;
        upstream = dz.matmul(&tape.params.layers[k].w)?;
        layers.push(Layer { w: dw, b: db });
    }
    layers.reverse();
    let mut grads = ParamSet { layers };
    if let Some(mask) = tape.mask {
        for (g, m) in grads.blocks_mut().zip(mask.blocks()) {
            for (gv, &mv) in g.iter_mut().zip(m) {
                *gv *= mv;
            }
        }
    }
    Ok((grads, upstream))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        let inv = 1.0 / total;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    out
}
