//! The two-branch model: rectifier MLP encoders with a normalized output,
//! a softmax cluster head, the four training losses and their analytic
//! gradients, SGD with momentum, and the EMA branch merge.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GmError, Result};
use crate::kernel::{dot, l2_normalize, norm, softmax, squared_euclidean, Vec64, NORM_FLOOR};

/// Probabilities entering a logarithm in the pairwise loss are clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

/// Dense affine layer, weights stored row-major as `out_dim x in_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    fn random<R: Rng>(in_dim: usize, out_dim: usize, gain: f64, rng: &mut R) -> Self {
        let std = (gain / in_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weight = (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect();
        Self { in_dim, out_dim, weight, bias: vec![0.0; out_dim] }
    }

    fn apply(&self, x: &[f64]) -> Vec64 {
        (0..self.out_dim)
            .map(|o| self.bias[o] + dot(&self.weight[o * self.in_dim..(o + 1) * self.in_dim], x))
            .collect()
    }

    /// Accumulates parameter gradients for output gradient `dy` at input `x`
    /// into `grad` and returns the gradient with respect to `x`.
    fn backprop(&self, x: &[f64], dy: &[f64], grad: &mut Layer) -> Vec64 {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = o * self.in_dim;
            grad.bias[o] += g;
            for i in 0..self.in_dim {
                grad.weight[row + i] += g * x[i];
                dx[i] += g * self.weight[row + i];
            }
        }
        dx
    }
}

/// Rectifier MLP whose final linear output is l2-normalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub layers: Vec<Layer>,
}

struct EncoderTrace {
    /// Input to each layer.
    inputs: Vec<Vec64>,
    /// Pre-activation of each hidden layer.
    hidden_pre: Vec<Vec64>,
    raw: Vec64,
    z: Vec64,
}

impl Encoder {
    /// He-initialized encoder with layer widths `dims` (input first).
    pub fn random<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(GmError::Config(format!("invalid encoder widths {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| Layer::random(w[0], w[1], if l == last { 1.0 } else { 2.0 }, rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self { layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect() }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(GmError::Empty("encoder layers"));
        }
        for l in &layers {
            if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(GmError::Shape("layer buffers do not match declared dims".into()));
            }
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(GmError::Shape(format!(
                    "layer output {} does not feed input {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim));
        d
    }

    pub fn same_shape(&self, other: &Encoder) -> bool {
        self.dims() == other.dims()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.dims())
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec64> {
        if x.len() != self.input_dim() {
            return Err(GmError::DimensionMismatch { expected: self.input_dim(), found: x.len() });
        }
        Ok(self.trace(x).z)
    }

    pub fn encode_all(&self, xs: &[Vec64]) -> Result<Vec<Vec64>> {
        xs.iter().map(|x| self.encode(x)).collect()
    }

    fn trace(&self, x: &[f64]) -> EncoderTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut hidden_pre = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let a = layer.apply(&h);
            inputs.push(h);
            if l == last {
                h = a;
            } else {
                h = a.iter().map(|v| v.max(0.0)).collect();
                hidden_pre.push(a);
            }
        }
        let z = l2_normalize(&h);
        EncoderTrace { inputs, hidden_pre, raw: h, z }
    }

    /// Backpropagates `dz` (gradient with respect to the normalized output)
    /// through the trace, accumulating into `grad`.
    fn backprop(&self, trace: &EncoderTrace, dz: &[f64], grad: &mut Encoder) {
        let n = norm(&trace.raw);
        let mut d: Vec64 = if n < NORM_FLOOR {
            dz.to_vec()
        } else {
            // Project onto the tangent space of the unit sphere at z.
            let zd = dot(&trace.z, dz);
            dz.iter().zip(&trace.z).map(|(g, z)| (g - z * zd) / n).collect()
        };
        for l in (0..self.layers.len()).rev() {
            if l < self.layers.len() - 1 {
                for (g, a) in d.iter_mut().zip(&trace.hidden_pre[l]) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            d = self.layers[l].backprop(&trace.inputs[l], &d, &mut grad.layers[l]);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameter buffers in layer order, weights before biases.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Linear layer followed by softmax, producing soft cluster assignments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterHead {
    pub linear: Layer,
}

impl ClusterHead {
    pub fn random<R: Rng>(dim: usize, clusters: usize, rng: &mut R) -> Result<Self> {
        if clusters == 0 || dim == 0 {
            return Err(GmError::Config("cluster head needs at least one cluster".into()));
        }
        Ok(Self { linear: Layer::random(dim, clusters, 1.0, rng) })
    }

    pub fn zeros(dim: usize, clusters: usize) -> Self {
        Self { linear: Layer::zeros(dim, clusters) }
    }

    pub fn clusters(&self) -> usize {
        self.linear.out_dim
    }

    pub fn input_dim(&self) -> usize {
        self.linear.in_dim
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec64> {
        if z.len() != self.input_dim() {
            return Err(GmError::DimensionMismatch { expected: self.input_dim(), found: z.len() });
        }
        Ok(softmax(&self.linear.apply(z)))
    }

    /// Index of the most probable cluster, lowest index on ties.
    pub fn assign(&self, z: &[f64]) -> Result<usize> {
        let c = self.forward(z)?;
        Ok(argmax(&c))
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.clusters())
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        vec![&self.linear.weight, &self.linear.bias]
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.linear.weight, &mut self.linear.bias]
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Frozen static encoder, trainable dynamic encoder and the cluster head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchPair {
    pub static_branch: Encoder,
    pub dynamic_branch: Encoder,
    pub head: ClusterHead,
}

impl BranchPair {
    /// Both branches start from the same encoder.
    pub fn from_pretrained(encoder: Encoder, head: ClusterHead) -> Result<Self> {
        if head.input_dim() != encoder.output_dim() {
            return Err(GmError::DimensionMismatch {
                expected: encoder.output_dim(),
                found: head.input_dim(),
            });
        }
        Ok(Self { static_branch: encoder.clone(), dynamic_branch: encoder, head })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub bce: f64,
    pub sd: f64,
    pub pll: f64,
    pub mse: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { bce: 1.0, sd: 1.0, pll: 1.0, mse: 1.0 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self { bce: 0.0, sd: 0.0, pll: 0.0, mse: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for w in [self.bce, self.sd, self.pll, self.mse] {
            if !w.is_finite() || w < 0.0 {
                return Err(GmError::Config(format!("loss weight {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Pairwise clustering term: raw inputs and their binary similarity matrix.
#[derive(Clone, Debug, Default)]
pub struct BceTerm {
    pub inputs: Vec<Vec64>,
    /// Row-major `n x n`, entries 0 or 1.
    pub similarity: Vec<u8>,
}

/// Prototype term: raw exemplars per class and the (constant) prototypes.
#[derive(Clone, Debug)]
pub struct PllTerm {
    pub exemplars: Vec<Vec<Vec64>>,
    pub prototypes: Vec<Vec64>,
    pub tau: f64,
}

/// Everything one weighted loss evaluation needs. Terms left empty
/// contribute nothing.
#[derive(Clone, Debug, Default)]
pub struct LossContext {
    pub bce: Option<BceTerm>,
    pub sd_inputs: Vec<Vec64>,
    pub pll: Option<PllTerm>,
    pub mse_pairs: Vec<(Vec64, Vec64)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub sd: f64,
    pub pll: f64,
    pub mse: f64,
    pub total: f64,
}

/// Gradients for every trainable parameter, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub dynamic: Encoder,
    pub head: ClusterHead,
}

impl Gradients {
    pub fn zeros_for(pair: &BranchPair) -> Self {
        Self { dynamic: pair.dynamic_branch.zeros_like(), head: pair.head.zeros_like() }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.dynamic.param_slices();
        s.extend(self.head.param_slices());
        s
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.dynamic.param_slices_mut();
        s.extend(self.head.param_slices_mut());
        s
    }

    pub fn norm(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Pairwise binary cross entropy over soft assignments.
///
/// `similarity` is row-major `n x n`. The double sum runs over all ordered
/// pairs including `i == j` and is divided by `n`.
pub fn loss_bce(assignments: &[Vec64], similarity: &[u8]) -> Result<f64> {
    let n = assignments.len();
    if n == 0 {
        return Err(GmError::Empty("assignment list"));
    }
    if similarity.len() != n * n {
        return Err(GmError::Shape(format!("similarity has {} entries for {n} samples", similarity.len())));
    }
    let k = assignments[0].len();
    if assignments.iter().any(|c| c.len() != k) {
        return Err(GmError::Shape("assignment vectors differ in length".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let p = dot(&assignments[i], &assignments[j]).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            total += if similarity[i * n + j] != 0 { p.ln() } else { (1.0 - p).ln() };
        }
    }
    Ok(-total / n as f64)
}

/// Mean squared distance between static and dynamic embeddings.
pub fn loss_sd(pair: &BranchPair, batch: &[Vec64]) -> Result<f64> {
    if batch.is_empty() {
        return Err(GmError::Empty("distillation batch"));
    }
    let mut total = 0.0;
    for x in batch {
        let zs = pair.static_branch.encode(x)?;
        let zd = pair.dynamic_branch.encode(x)?;
        total += squared_euclidean(&zs, &zd);
    }
    Ok(total / batch.len() as f64)
}

/// Temperature-scaled prototype cross entropy, averaged per class then over
/// classes.
pub fn loss_pll(dynamic: &Encoder, exemplars: &[Vec<Vec64>], prototypes: &[Vec64], tau: f64) -> Result<f64> {
    check_pll(exemplars, prototypes, tau)?;
    let k = prototypes.len() as f64;
    let mut total = 0.0;
    for (class, members) in exemplars.iter().enumerate() {
        let mut class_sum = 0.0;
        for p in members {
            let z = dynamic.encode(p)?;
            let logits: Vec64 = prototypes.iter().map(|mu| dot(&z, mu) / tau).collect();
            class_sum += -log_softmax_at(&logits, class);
        }
        total += class_sum / members.len() as f64;
    }
    Ok(total / k)
}

/// Mean squared distance between embeddings of each input and its
/// augmented copy.
pub fn loss_mse_consistency(dynamic: &Encoder, pairs: &[(Vec64, Vec64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (x, xa) in pairs {
        if x.len() != xa.len() {
            return Err(GmError::DimensionMismatch { expected: x.len(), found: xa.len() });
        }
        total += squared_euclidean(&dynamic.encode(x)?, &dynamic.encode(xa)?);
    }
    Ok(total / pairs.len() as f64)
}

fn check_pll(exemplars: &[Vec<Vec64>], prototypes: &[Vec64], tau: f64) -> Result<()> {
    if prototypes.is_empty() {
        return Err(GmError::Empty("prototype list"));
    }
    if exemplars.len() != prototypes.len() {
        return Err(GmError::Shape(format!(
            "{} exemplar classes for {} prototypes",
            exemplars.len(),
            prototypes.len()
        )));
    }
    if exemplars.iter().any(Vec::is_empty) {
        return Err(GmError::Empty("class exemplar list"));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(GmError::Config(format!("temperature {tau} must be positive")));
    }
    Ok(())
}

fn log_softmax_at(logits: &[f64], k: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[k] - lse
}

/// Records which side of every rectifier and clamp boundary an evaluation
/// landed on. Finite differences are only meaningful when both stencil
/// points share a signature.
#[derive(Default, Clone, Copy, PartialEq, Eq, Debug)]
struct Signature(u64);

impl Signature {
    fn mix(&mut self, bit: bool) {
        self.0 = (self.0 ^ bit as u64).wrapping_mul(0x100_0000_01b3).rotate_left(5);
    }

    fn trace(&mut self, t: &EncoderTrace) {
        for pre in &t.hidden_pre {
            for a in pre {
                self.mix(*a > 0.0);
            }
        }
        self.mix(norm(&t.raw) < NORM_FLOOR);
    }
}

/// Weighted loss value without gradients.
pub fn evaluate(pair: &BranchPair, ctx: &LossContext, weights: &LossWeights) -> Result<LossBreakdown> {
    compute(pair, ctx, weights, None, &mut Signature::default())
}

/// Weighted loss and its exact gradient with respect to the dynamic branch
/// and the cluster head. The static branch never receives gradient.
pub fn backward(pair: &BranchPair, ctx: &LossContext, weights: &LossWeights) -> Result<(LossBreakdown, Gradients)> {
    let mut grads = Gradients::zeros_for(pair);
    let loss = compute(pair, ctx, weights, Some(&mut grads), &mut Signature::default())?;
    Ok((loss, grads))
}

fn compute(
    pair: &BranchPair,
    ctx: &LossContext,
    weights: &LossWeights,
    mut grads: Option<&mut Gradients>,
    sig: &mut Signature,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let dynamic = &pair.dynamic_branch;
    let mut out = LossBreakdown::default();

    if let Some(term) = ctx.bce.as_ref().filter(|_| weights.bce > 0.0) {
        let n = term.inputs.len();
        if n == 0 {
            return Err(GmError::Empty("pairwise batch"));
        }
        if term.similarity.len() != n * n {
            return Err(GmError::Shape(format!("similarity has {} entries for {n} samples", term.similarity.len())));
        }
        let mut traces = Vec::with_capacity(n);
        let mut logits = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n);
        for x in &term.inputs {
            check_dim(dynamic, x)?;
            let t = dynamic.trace(x);
            sig.trace(&t);
            let l = pair.head.linear.apply(&t.z);
            probs.push(softmax(&l));
            logits.push(l);
            traces.push(t);
        }
        let inv_n = 1.0 / n as f64;
        let mut value = 0.0;
        // d loss / d p_ij, zero where the clamp is active.
        let mut dp = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let raw = dot(&probs[i], &probs[j]);
                let clamped = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                let inside = raw > PROB_CLAMP && raw < 1.0 - PROB_CLAMP;
                sig.mix(inside);
                let similar = term.similarity[i * n + j] != 0;
                value += if similar { clamped.ln() } else { (1.0 - clamped).ln() };
                if inside {
                    dp[i * n + j] = if similar { -inv_n / clamped } else { inv_n / (1.0 - clamped) };
                }
            }
        }
        out.bce = -value * inv_n;
        if let Some(g) = grads.as_deref_mut() {
            let k = pair.head.clusters();
            for i in 0..n {
                let mut dc = vec![0.0; k];
                for j in 0..n {
                    let coeff_ij = dp[i * n + j];
                    let coeff_ji = dp[j * n + i];
                    for (d, c) in dc.iter_mut().zip(&probs[j]) {
                        *d += (coeff_ij + coeff_ji) * c;
                    }
                }
                let s = dot(&dc, &probs[i]);
                let dl: Vec64 = probs[i].iter().zip(&dc).map(|(p, d)| weights.bce * p * (d - s)).collect();
                let dz = pair.head.linear.backprop(&traces[i].z, &dl, &mut g.head.linear);
                dynamic.backprop(&traces[i], &dz, &mut g.dynamic);
            }
        }
    }

    if weights.sd > 0.0 && !ctx.sd_inputs.is_empty() {
        let inv_n = 1.0 / ctx.sd_inputs.len() as f64;
        let mut value = 0.0;
        for x in &ctx.sd_inputs {
            check_dim(dynamic, x)?;
            let zs = pair.static_branch.encode(x)?;
            let t = dynamic.trace(x);
            sig.trace(&t);
            value += squared_euclidean(&zs, &t.z);
            if let Some(g) = grads.as_deref_mut() {
                let dz: Vec64 = t.z.iter().zip(&zs).map(|(d, s)| weights.sd * 2.0 * inv_n * (d - s)).collect();
                dynamic.backprop(&t, &dz, &mut g.dynamic);
            }
        }
        out.sd = value * inv_n;
    }

    if let Some(term) = ctx.pll.as_ref().filter(|_| weights.pll > 0.0) {
        check_pll(&term.exemplars, &term.prototypes, term.tau)?;
        let k = term.prototypes.len();
        let mut value = 0.0;
        for (class, members) in term.exemplars.iter().enumerate() {
            let scale = 1.0 / (k as f64 * members.len() as f64);
            for p in members {
                check_dim(dynamic, p)?;
                let t = dynamic.trace(p);
                sig.trace(&t);
                let logits: Vec64 = term.prototypes.iter().map(|mu| dot(&t.z, mu) / term.tau).collect();
                value += -log_softmax_at(&logits, class) * scale;
                if let Some(g) = grads.as_deref_mut() {
                    let q = softmax(&logits);
                    let mut dz = vec![0.0; t.z.len()];
                    for (j, mu) in term.prototypes.iter().enumerate() {
                        let coeff = weights.pll * scale * (q[j] - if j == class { 1.0 } else { 0.0 }) / term.tau;
                        for (d, m) in dz.iter_mut().zip(mu) {
                            *d += coeff * m;
                        }
                    }
                    dynamic.backprop(&t, &dz, &mut g.dynamic);
                }
            }
        }
        out.pll = value;
    }

    if weights.mse > 0.0 && !ctx.mse_pairs.is_empty() {
        let inv_n = 1.0 / ctx.mse_pairs.len() as f64;
        let mut value = 0.0;
        for (x, xa) in &ctx.mse_pairs {
            check_dim(dynamic, x)?;
            check_dim(dynamic, xa)?;
            let t = dynamic.trace(x);
            let ta = dynamic.trace(xa);
            sig.trace(&t);
            sig.trace(&ta);
            value += squared_euclidean(&t.z, &ta.z);
            if let Some(g) = grads.as_deref_mut() {
                let dz: Vec64 = t.z.iter().zip(&ta.z).map(|(a, b)| weights.mse * 2.0 * inv_n * (a - b)).collect();
                let dza: Vec64 = dz.iter().map(|v| -v).collect();
                dynamic.backprop(&t, &dz, &mut g.dynamic);
                dynamic.backprop(&ta, &dza, &mut g.dynamic);
            }
        }
        out.mse = value * inv_n;
    }

    out.total = weights.bce * out.bce + weights.sd * out.sd + weights.pll * out.pll + weights.mse * out.mse;
    Ok(out)
}

fn check_dim(enc: &Encoder, x: &[f64]) -> Result<()> {
    if x.len() != enc.input_dim() {
        return Err(GmError::DimensionMismatch { expected: enc.input_dim(), found: x.len() });
    }
    Ok(())
}

/// Central-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than
/// relatively (finite-difference round-off is around 1e-11 per unit loss).
pub const FD_FLOOR: f64 = 1e-5;

/// Worst relative error between `analytic` and central differences of the
/// weighted loss over every trainable parameter. Coordinates whose stencil
/// straddles a rectifier or clamp boundary are skipped.
pub fn compare_gradients(
    pair: &BranchPair,
    ctx: &LossContext,
    weights: &LossWeights,
    analytic: &Gradients,
) -> Result<f64> {
    let mut probe = pair.clone();
    let mut worst: f64 = 0.0;
    let analytic = analytic.slices();
    let mut flat_index = 0;
    for b in 0..analytic.len() {
        let len = analytic[b].len();
        for i in 0..len {
            let original = param_mut(&mut probe, b)[i];
            param_mut(&mut probe, b)[i] = original + FD_STEP;
            let mut sig_plus = Signature::default();
            let plus = compute(&probe, ctx, weights, None, &mut sig_plus)?.total;
            param_mut(&mut probe, b)[i] = original - FD_STEP;
            let mut sig_minus = Signature::default();
            let minus = compute(&probe, ctx, weights, None, &mut sig_minus)?.total;
            param_mut(&mut probe, b)[i] = original;
            flat_index += 1;
            if sig_plus != sig_minus {
                continue;
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[b][i];
            let denom = a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    log::trace!("checked {flat_index} coordinates");
    Ok(worst)
}

fn param_mut(pair: &mut BranchPair, buffer: usize) -> &mut [f64] {
    let enc_buffers = pair.dynamic_branch.layers.len() * 2;
    if buffer < enc_buffers {
        let layer = &mut pair.dynamic_branch.layers[buffer / 2];
        if buffer % 2 == 0 {
            &mut layer.weight
        } else {
            &mut layer.bias
        }
    } else if buffer == enc_buffers {
        &mut pair.head.linear.weight
    } else {
        &mut pair.head.linear.bias
    }
}

/// [`backward`] checked against central differences; returns the worst
/// relative error.
pub fn gradient_check(pair: &BranchPair, ctx: &LossContext, weights: &LossWeights) -> Result<f64> {
    let (_, grads) = backward(pair, ctx, weights)?;
    compare_gradients(pair, ctx, weights, &grads)
}

/// SGD with momentum, coupled weight decay and a step learning-rate decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub base_lr: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub epoch: usize,
    #[serde(skip)]
    velocity: Option<Vec<Vec64>>,
}

impl OptState {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !(0.0..1.0).contains(&momentum) || !(weight_decay >= 0.0) {
            return Err(GmError::Config(format!(
                "bad optimizer settings lr={learning_rate} momentum={momentum} wd={weight_decay}"
            )));
        }
        Ok(Self {
            base_lr: learning_rate,
            learning_rate,
            momentum,
            weight_decay,
            decay_every: 60,
            decay_factor: 0.1,
            epoch: 0,
            velocity: None,
        })
    }

    /// Fresh state with the same hyperparameters.
    pub fn restarted(&self) -> Self {
        Self { learning_rate: self.base_lr, epoch: 0, velocity: None, ..self.clone() }
    }

    pub fn step(&mut self, dynamic: &mut Encoder, head: &mut ClusterHead, grads: &Gradients) -> Result<()> {
        let grad_slices = grads.slices();
        let mut params = dynamic.param_slices_mut();
        params.extend(head.param_slices_mut());
        if params.len() != grad_slices.len() || params.iter().zip(&grad_slices).any(|(p, g)| p.len() != g.len()) {
            return Err(GmError::Shape("gradient buffers do not mirror parameters".into()));
        }
        let velocity = self
            .velocity
            .get_or_insert_with(|| grad_slices.iter().map(|g| vec![0.0; g.len()]).collect());
        if velocity.len() != params.len() || velocity.iter().zip(&params).any(|(v, p)| v.len() != p.len()) {
            return Err(GmError::Shape("velocity buffers do not mirror parameters".into()));
        }
        for ((p, g), v) in params.into_iter().zip(&grad_slices).zip(velocity.iter_mut()) {
            for i in 0..p.len() {
                v[i] = self.momentum * v[i] + g[i] + self.weight_decay * p[i];
                p[i] -= self.learning_rate * v[i];
            }
        }
        Ok(())
    }

    /// Marks the end of an epoch, applying the step decay at boundaries.
    pub fn end_epoch(&mut self) {
        self.epoch += 1;
        if self.decay_every > 0 {
            let drops = (self.epoch / self.decay_every) as i32;
            self.learning_rate = self.base_lr * self.decay_factor.powi(drops);
        }
    }
}

/// `alpha * static + (1 - alpha) * dynamic`, parameter by parameter.
pub fn ema_merge(static_p: &Encoder, dynamic_p: &Encoder, alpha: f64) -> Result<Encoder> {
    if !static_p.same_shape(dynamic_p) {
        return Err(GmError::Shape(format!(
            "cannot merge encoders {:?} and {:?}",
            static_p.dims(),
            dynamic_p.dims()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(GmError::Config(format!("EMA coefficient {alpha} outside [0, 1]")));
    }
    let mut out = dynamic_p.clone();
    for (o, s) in out.param_slices_mut().into_iter().zip(static_p.param_slices()) {
        for (d, s) in o.iter_mut().zip(s) {
            *d = alpha * s + (1.0 - alpha) * *d;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity2() -> Encoder {
        Encoder::from_layers(vec![Layer { in_dim: 2, out_dim: 2, weight: vec![1.0, 0.0, 0.0, 1.0], bias: vec![0.0; 2] }])
            .unwrap()
    }

    #[test]
    fn encode_examples() {
        let z = identity2().encode(&[3.0, 4.0]).unwrap();
        assert!((z[0] - 0.6).abs() < 1e-15 && (z[1] - 0.8).abs() < 1e-15);
        let zero = Encoder::zeros(&[3, 4, 2]);
        assert_eq!(zero.encode(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(identity2().encode(&[1.0]), Err(GmError::DimensionMismatch { .. })));
    }

    #[test]
    fn encode_two_layer_by_hand() {
        // hidden = relu([[1,-1],[2,0.5],[-1,0]] x + [0.5,0,0.25]) for x = [1,0] -> [1.5, 2, 0]
        // raw = [[1,0,3],[0,-1,1]] hidden + [0,1] = [1.5, -1]
        let enc = Encoder::from_layers(vec![
            Layer { in_dim: 2, out_dim: 3, weight: vec![1.0, -1.0, 2.0, 0.5, -1.0, 0.0], bias: vec![0.5, 0.0, 0.25] },
            Layer { in_dim: 3, out_dim: 2, weight: vec![1.0, 0.0, 3.0, 0.0, -1.0, 1.0], bias: vec![0.0, 1.0] },
        ])
        .unwrap();
        let z = enc.encode(&[1.0, 0.0]).unwrap();
        let n = (1.5f64 * 1.5 + 1.0).sqrt();
        assert!((z[0] - 1.5 / n).abs() < 1e-15);
        assert!((z[1] + 1.0 / n).abs() < 1e-15);
    }

    #[test]
    fn head_examples() {
        assert_eq!(ClusterHead::zeros(3, 2).forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(ClusterHead::zeros(3, 1).forward(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0]);
        let head = ClusterHead { linear: Layer { in_dim: 2, out_dim: 2, weight: vec![2.0, 1.0, -1.0, 0.5], bias: vec![0.0, 0.5] } };
        // logits [2, -0.5]
        let c = head.forward(&[1.0, 0.0]).unwrap();
        let e = (2.5f64).exp();
        assert!((c[0] - e / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn bce_examples() {
        let v = loss_bce(&[vec![1.0, 0.0], vec![1.0, 0.0]], &[1, 1, 1, 1]).unwrap();
        assert!((v - 4.0 * -(1.0f64 - 1e-7).ln() / 2.0).abs() < 1e-15);
        assert!(v < 1e-6);
        let v = loss_bce(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1, 0, 0, 1]).unwrap();
        assert!(v < 1e-6);
        let v = loss_bce(&[vec![0.5, 0.5], vec![0.5, 0.5]], &[1, 1, 1, 1]).unwrap();
        assert!((v - 1.38629).abs() < 1e-5);
        assert!(loss_bce(&[vec![1.0]], &[1, 1]).is_err());
    }

    #[test]
    fn sd_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = Encoder::random(&[3, 5, 4], &mut rng).unwrap();
        let pair = BranchPair::from_pretrained(enc, ClusterHead::zeros(4, 2)).unwrap();
        assert_eq!(loss_sd(&pair, &[vec![1.0, 2.0, 3.0]]).unwrap(), 0.0);
        assert!(loss_sd(&pair, &[]).is_err());

        let swap = Encoder::from_layers(vec![Layer { in_dim: 2, out_dim: 2, weight: vec![0.0, 1.0, 1.0, 0.0], bias: vec![0.0; 2] }])
            .unwrap();
        let pair = BranchPair { static_branch: identity2(), dynamic_branch: swap, head: ClusterHead::zeros(2, 1) };
        assert_eq!(loss_sd(&pair, &[vec![1.0, 0.0]]).unwrap(), 2.0);
        // per-sample distances 2 and 0 -> mean 1
        assert_eq!(loss_sd(&pair, &[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap(), 1.0);
    }

    #[test]
    fn pll_examples() {
        let enc = identity2();
        let protos = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let ex = vec![vec![vec![2.0, 0.0]], vec![vec![0.0, 3.0]]];
        let v1 = loss_pll(&enc, &ex[..1], &protos[..1], 0.1).unwrap();
        assert_eq!(v1, 0.0);
        let v = loss_pll(&enc, &ex, &protos, 1.0).unwrap();
        assert!((v - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-14);
        assert!((v - 0.31326).abs() < 1e-5);
        let v = loss_pll(&enc, &ex, &protos, 0.1).unwrap();
        assert!((v - (1.0 + (-10.0f64).exp()).ln()).abs() < 1e-15);
        assert!(loss_pll(&enc, &[vec![], vec![vec![0.0, 1.0]]], &protos, 1.0).is_err());
    }

    #[test]
    fn mse_examples() {
        let enc = identity2();
        assert_eq!(loss_mse_consistency(&enc, &[(vec![1.0, 2.0], vec![1.0, 2.0])]).unwrap(), 0.0);
        assert_eq!(loss_mse_consistency(&enc, &[(vec![1.0, 0.0], vec![0.0, 5.0])]).unwrap(), 2.0);
        let v = loss_mse_consistency(&enc, &[(vec![1.0, 0.0], vec![2.0, 0.0]), (vec![1.0, 0.0], vec![0.0, 1.0])]).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn sgd_examples() {
        let mut enc = Encoder::from_layers(vec![Layer { in_dim: 1, out_dim: 1, weight: vec![1.0], bias: vec![0.0] }]).unwrap();
        let mut head = ClusterHead::zeros(1, 1);
        let mut grads = Gradients { dynamic: enc.zeros_like(), head: head.zeros_like() };

        let mut opt = OptState::new(0.1, 0.0, 0.0).unwrap();
        opt.step(&mut enc, &mut head, &grads).unwrap();
        assert_eq!(enc.layers[0].weight[0], 1.0);

        grads.dynamic.layers[0].weight[0] = 1.0;
        opt.step(&mut enc, &mut head, &grads).unwrap();
        assert!((enc.layers[0].weight[0] - 0.9).abs() < 1e-15);

        let mut opt = OptState::new(0.1, 0.9, 0.0).unwrap();
        enc.layers[0].weight[0] = 1.0;
        opt.step(&mut enc, &mut head, &grads).unwrap();
        assert!((enc.layers[0].weight[0] - 0.9).abs() < 1e-15);
        opt.step(&mut enc, &mut head, &grads).unwrap();
        assert!((enc.layers[0].weight[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn lr_decays_every_sixty_epochs() {
        let mut opt = OptState::new(0.1, 0.9, 1e-4).unwrap();
        for _ in 0..59 {
            opt.end_epoch();
        }
        assert_eq!(opt.learning_rate, 0.1);
        opt.end_epoch();
        assert!((opt.learning_rate - 0.01).abs() < 1e-15);
        for _ in 0..60 {
            opt.end_epoch();
        }
        assert!((opt.learning_rate - 0.001).abs() < 1e-15);
    }

    #[test]
    fn ema_examples() {
        let one = Encoder::from_layers(vec![Layer { in_dim: 1, out_dim: 1, weight: vec![1.0], bias: vec![1.0] }]).unwrap();
        let zero = Encoder::zeros(&[1, 1]);
        assert_eq!(ema_merge(&one, &zero, 1.0).unwrap(), one);
        assert_eq!(ema_merge(&one, &zero, 0.0).unwrap(), zero);
        let m = ema_merge(&one, &zero, 0.99).unwrap();
        assert!((m.layers[0].weight[0] - 0.99).abs() < 1e-15);
        assert!(ema_merge(&one, &Encoder::zeros(&[2, 1]), 0.5).is_err());
    }

    #[test]
    fn zero_weights_give_zero_gradients_and_zero_check_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pair = BranchPair::from_pretrained(
            Encoder::random(&[3, 4, 3], &mut rng).unwrap(),
            ClusterHead::random(3, 2, &mut rng).unwrap(),
        )
        .unwrap();
        let ctx = LossContext { sd_inputs: vec![vec![0.3, -0.2, 1.0]], ..Default::default() };
        let (_, g) = backward(&pair, &ctx, &LossWeights::zero()).unwrap();
        assert_eq!(g.norm(), 0.0);
        assert_eq!(gradient_check(&pair, &ctx, &LossWeights::zero()).unwrap(), 0.0);
    }
}
