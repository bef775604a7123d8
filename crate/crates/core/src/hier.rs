//! Stacked non-negative sparse coding layers with a multinomial logistic
//! head, trained by cross-entropy.
//!
//! Each layer computes `a = max(0, Φᵀx - λ)` with a learnable per-unit λ, so
//! the forward pass is exactly a dense ReLU network with weights Φᵀ and bias
//! -λ. [`BiasMode`] controls whether λ may go negative.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::format::{Reader, Writer, DICTIONARY_MAGIC, HEAD_BIAS_MAGIC, HEAD_WEIGHTS_MAGIC, LAMBDA_MAGIC, MODEL_MAGIC};
use crate::data::{from_row_major, row_major};
use crate::error::{check_dim, invalid, Error, Result};
use crate::inference::relu_shift;
use crate::learning::{normalize_columns, svd_orthogonalize};
use crate::par::{chunked_fold, Exec, REDUCE_CHUNK};
use crate::types::{Dictionary, Layer, LayerStack, RegCoeffs, Sample, SignPolicy};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub enum BiasMode {
    /// λ of any sign: a standard ReLU network.
    FreeCnn,
    /// Bias weights -λ kept negative: λ_i ≥ `lambda_min` > 0.
    NegativeOnly { lambda_min: f64 },
    /// λ fixed to one shared value per layer; never trained.
    SharedScalarFixed(Vec<f64>),
}

impl BiasMode {
    pub const DEFAULT_LAMBDA_MIN: f64 = 0.05;

    pub fn negative_only() -> Self {
        BiasMode::NegativeOnly {
            lambda_min: Self::DEFAULT_LAMBDA_MIN,
        }
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        match self {
            BiasMode::FreeCnn => Ok(()),
            BiasMode::NegativeOnly { lambda_min } if *lambda_min > 0.0 && lambda_min.is_finite() => Ok(()),
            BiasMode::NegativeOnly { lambda_min } => Err(invalid(format!("lambda_min must be > 0, got {lambda_min}"))),
            BiasMode::SharedScalarFixed(ls) => {
                check_dim("fixed lambda count", n_layers, ls.len())?;
                if ls.iter().all(|l| *l > 0.0 && l.is_finite()) {
                    Ok(())
                } else {
                    Err(invalid("fixed lambdas must be > 0"))
                }
            }
        }
    }

    fn sign_policy(&self) -> SignPolicy {
        match self {
            BiasMode::FreeCnn => SignPolicy::Free,
            _ => SignPolicy::NonNegativeOnly,
        }
    }

    /// Brings λ of layer `k` into the feasible set of this mode.
    fn project(&self, k: usize, lambdas: &mut DVector<f64>) {
        match self {
            BiasMode::FreeCnn => {}
            BiasMode::NegativeOnly { lambda_min } => lambdas.apply(|v| *v = v.max(*lambda_min)),
            BiasMode::SharedScalarFixed(ls) => lambdas.fill(ls[k]),
        }
    }

    fn reg(&self, lambdas: DVector<f64>) -> Result<RegCoeffs> {
        RegCoeffs::per_unit(lambdas, self.sign_policy())
    }

    /// Copy of `model` with every λ projected into this mode's feasible set.
    pub fn apply(&self, model: &LayerStack) -> Result<LayerStack> {
        self.validate(model.layers().len())?;
        let layers = model
            .layers()
            .iter()
            .enumerate()
            .map(|(k, layer)| {
                let mut l = layer.reg.to_vector(layer.dictionary.n_atoms())?;
                self.project(k, &mut l);
                Ok(Layer {
                    dictionary: layer.dictionary.clone(),
                    reg: self.reg(l)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        LayerStack::new(layers, model.head_weights().clone(), model.head_bias().clone())
    }
}

/// Input with a one-of-K target.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    input: Sample,
    label: usize,
    classes: usize,
}

impl LabeledSample {
    /// From a one-hot target; exactly one entry must be 1 and the rest 0.
    pub fn new(input: Sample, target: &DVector<f64>) -> Result<Self> {
        let ones: Vec<usize> = target.iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i).collect();
        let zeros = target.iter().filter(|v| **v == 0.0).count();
        if ones.len() != 1 || zeros + 1 != target.len() {
            return Err(invalid("target must be one-hot"));
        }
        Self::from_label(input, ones[0], target.len())
    }

    pub fn from_label(input: Sample, label: usize, classes: usize) -> Result<Self> {
        if label >= classes {
            return Err(invalid(format!("label {label} out of range for {classes} classes")));
        }
        Ok(LabeledSample { input, label, classes })
    }

    pub fn input(&self) -> &Sample {
        &self.input
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn target(&self) -> DVector<f64> {
        let mut t = DVector::zeros(self.classes);
        t[self.label] = 1.0;
        t
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let e = logits.map(|v| (v - max).exp());
    let total = e.sum();
    e / total
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Unconstrained parameters of a layer stack, for gradient computation and
/// checking.
#[derive(Debug, Clone, PartialEq)]
pub struct StackParams {
    pub dictionaries: Vec<DMatrix<f64>>,
    pub lambdas: Vec<DVector<f64>>,
    pub head_weights: DMatrix<f64>,
    pub head_bias: DVector<f64>,
}

/// Gradients, laid out like [`StackParams`].
pub type StackGradients = StackParams;

/// Optional auxiliary reconstruction term `γ · ½‖x - a Φ₁a₁ - b Φ₁Φ₂a₂‖²`
/// added to the cross-entropy (the `b` term needs two or more layers).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconTerm {
    pub gamma: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// Layer outputs a_L1, a_L2, ...
    pub activations: Vec<DVector<f64>>,
    pub logits: DVector<f64>,
    pub probabilities: DVector<f64>,
}

impl StackParams {
    pub fn from_stack(model: &LayerStack) -> Result<Self> {
        let mut dictionaries = Vec::new();
        let mut lambdas = Vec::new();
        for layer in model.layers() {
            dictionaries.push(layer.dictionary.matrix().clone());
            lambdas.push(layer.reg.to_vector(layer.dictionary.n_atoms())?);
        }
        Ok(StackParams {
            dictionaries,
            lambdas,
            head_weights: model.head_weights().clone(),
            head_bias: model.head_bias().clone(),
        })
    }

    /// Stack with these exact parameters; each Φ must already have unit-norm
    /// columns.
    pub fn to_stack(&self, bias_mode: &BiasMode) -> Result<LayerStack> {
        let layers = self
            .dictionaries
            .iter()
            .zip(&self.lambdas)
            .map(|(d, l)| {
                Ok(Layer {
                    dictionary: Dictionary::from_matrix(d.clone())?,
                    reg: bias_mode.reg(l.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        LayerStack::new(layers, self.head_weights.clone(), self.head_bias.clone())
    }

    pub fn zeros_like(&self) -> Self {
        StackParams {
            dictionaries: self.dictionaries.iter().map(|d| DMatrix::zeros(d.nrows(), d.ncols())).collect(),
            lambdas: self.lambdas.iter().map(|l| DVector::zeros(l.len())).collect(),
            head_weights: DMatrix::zeros(self.head_weights.nrows(), self.head_weights.ncols()),
            head_bias: DVector::zeros(self.head_bias.len()),
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.dictionaries.iter_mut().zip(&other.dictionaries) {
            *a += b;
        }
        for (a, b) in self.lambdas.iter_mut().zip(&other.lambdas) {
            *a += b;
        }
        self.head_weights += &other.head_weights;
        self.head_bias += &other.head_bias;
    }

    fn scale(&mut self, s: f64) {
        self.dictionaries.iter_mut().for_each(|d| *d *= s);
        self.lambdas.iter_mut().for_each(|l| *l *= s);
        self.head_weights *= s;
        self.head_bias *= s;
    }

    /// Largest absolute entry over all parameter blocks.
    pub fn amax(&self) -> f64 {
        self.dictionaries
            .iter()
            .map(|d| d.amax())
            .chain(self.lambdas.iter().map(|l| l.amax()))
            .chain([self.head_weights.amax(), self.head_bias.amax()])
            .fold(0.0, f64::max)
    }

    /// Every scalar parameter, in a fixed order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (d, l) in self.dictionaries.iter().zip(&self.lambdas) {
            out.extend(d.iter());
            out.extend(l.iter());
        }
        out.extend(self.head_weights.iter());
        out.extend(self.head_bias.iter());
        out
    }

    /// Mutable access to the scalar at position `k` of [`flatten`](Self::flatten).
    pub fn flat_mut(&mut self, mut k: usize) -> &mut f64 {
        for (d, l) in self.dictionaries.iter_mut().zip(self.lambdas.iter_mut()) {
            if k < d.len() {
                return &mut d.as_mut_slice()[k];
            }
            k -= d.len();
            if k < l.len() {
                return &mut l.as_mut_slice()[k];
            }
            k -= l.len();
        }
        if k < self.head_weights.len() {
            return &mut self.head_weights.as_mut_slice()[k];
        }
        k -= self.head_weights.len();
        &mut self.head_bias.as_mut_slice()[k]
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        check_dim("input length", self.dictionaries[0].nrows(), x.len())
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<Forward> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.dictionaries.len());
        let mut current = x.clone();
        for (phi, lambda) in self.dictionaries.iter().zip(&self.lambdas) {
            current = phi.tr_mul(&current).zip_map(lambda, relu_shift);
            activations.push(current.clone());
        }
        let logits = &self.head_weights * &current + &self.head_bias;
        let probabilities = softmax(&logits);
        Ok(Forward {
            activations,
            logits,
            probabilities,
        })
    }

    fn sample_loss(&self, s: &LabeledSample, recon: Option<&ReconTerm>) -> Result<f64> {
        check_dim("target length", self.head_bias.len(), s.classes())?;
        let f = self.forward(s.input().values())?;
        let mut loss = -f.probabilities[s.label()].max(PROB_FLOOR).ln();
        if let Some(rt) = recon.filter(|r| r.gamma != 0.0) {
            loss += rt.gamma * 0.5 * self.recon_error(s.input().values(), &f.activations, rt).norm_squared();
        }
        Ok(loss)
    }

    fn recon_error(&self, x: &DVector<f64>, acts: &[DVector<f64>], rt: &ReconTerm) -> DVector<f64> {
        let phi1 = &self.dictionaries[0];
        let mut inner = &acts[0] * rt.a;
        if acts.len() >= 2 {
            inner += (&self.dictionaries[1] * &acts[1]) * rt.b;
        }
        x - phi1 * inner
    }

    /// Mean cross-entropy, plus the auxiliary reconstruction term if given.
    pub fn loss(&self, batch: &[LabeledSample], recon: Option<&ReconTerm>) -> Result<f64> {
        if batch.is_empty() {
            return Err(invalid("batch is empty"));
        }
        let mut total = 0.0;
        for s in batch {
            total += self.sample_loss(s, recon)?;
        }
        Ok(total / batch.len() as f64)
    }

    fn sample_grad(&self, s: &LabeledSample, recon: Option<&ReconTerm>, acc: &mut StackGradients) -> Result<()> {
        check_dim("target length", self.head_bias.len(), s.classes())?;
        let x = s.input().values();
        let f = self.forward(x)?;
        let depth = self.dictionaries.len();
        let mut dlogits = f.probabilities.clone();
        dlogits[s.label()] -= 1.0;
        let top = &f.activations[depth - 1];
        acc.head_weights.ger(1.0, &dlogits, top, 1.0);
        acc.head_bias += &dlogits;

        // extra gradient flowing into each activation from the auxiliary term
        let mut aux: Vec<Option<DVector<f64>>> = vec![None; depth];
        if let Some(rt) = recon.filter(|r| r.gamma != 0.0) {
            let e = self.recon_error(x, &f.activations, rt) * rt.gamma;
            let phi1 = &self.dictionaries[0];
            let mut inner = &f.activations[0] * rt.a;
            if depth >= 2 {
                inner += (&self.dictionaries[1] * &f.activations[1]) * rt.b;
            }
            acc.dictionaries[0].ger(-1.0, &e, &inner, 1.0);
            let u = phi1.tr_mul(&e);
            aux[0] = Some(&u * -rt.a);
            if depth >= 2 {
                acc.dictionaries[1].ger(-rt.b, &u, &f.activations[1], 1.0);
                aux[1] = Some(self.dictionaries[1].tr_mul(&u) * -rt.b);
            }
        }

        let mut upstream = self.head_weights.tr_mul(&dlogits);
        for k in (0..depth).rev() {
            if let Some(extra) = &aux[k] {
                upstream += extra;
            }
            let out = &f.activations[k];
            let dz = upstream.zip_map(out, |g, a| if a > 0.0 { g } else { 0.0 });
            let input = if k == 0 { x } else { &f.activations[k - 1] };
            acc.dictionaries[k].ger(1.0, input, &dz, 1.0);
            acc.lambdas[k] -= &dz;
            upstream = &self.dictionaries[k] * &dz;
        }
        Ok(())
    }

    /// Exact (almost-everywhere) gradient of [`loss`](Self::loss).
    pub fn gradients(&self, exec: Exec, batch: &[LabeledSample], recon: Option<&ReconTerm>) -> Result<StackGradients> {
        if batch.is_empty() {
            return Err(invalid("batch is empty"));
        }
        let mut grads = chunked_fold(
            exec,
            batch.len(),
            REDUCE_CHUNK,
            |range| {
                let mut acc = self.zeros_like();
                for i in range {
                    self.sample_grad(&batch[i], recon, &mut acc)?;
                }
                Ok(acc)
            },
            |acc: &mut Result<StackGradients>, part| match (acc.as_mut(), part) {
                (Ok(a), Ok(p)) => a.add_assign(&p),
                (Ok(_), Err(e)) => *acc = Err(e),
                _ => {}
            },
        )
        .expect("batch is non-empty")?;
        grads.scale(1.0 / batch.len() as f64);
        Ok(grads)
    }
}

/// Layer activations and class probabilities `softmax(W a_last + b)`.
pub fn stack_forward(model: &LayerStack, x: &Sample) -> Result<Forward> {
    StackParams::from_stack(model)?.forward(x.values())
}

/// Mean cross-entropy `-Σ t log y` over the batch.
pub fn cross_entropy(batch: &[LabeledSample], model: &LayerStack) -> Result<f64> {
    StackParams::from_stack(model)?.loss(batch, None)
}

/// Cross-entropy gradients for every Φ, λ, W and b. Under `NegativeOnly`, λ
/// components at the floor that would be pushed below it are zeroed; under
/// `SharedScalarFixed` all λ gradients are zero.
pub fn backprop_grads(batch: &[LabeledSample], model: &LayerStack, bias_mode: &BiasMode) -> Result<StackGradients> {
    backprop_grads_with(Exec::default(), batch, model, bias_mode, None)
}

pub fn backprop_grads_with(
    exec: Exec,
    batch: &[LabeledSample],
    model: &LayerStack,
    bias_mode: &BiasMode,
    recon: Option<&ReconTerm>,
) -> Result<StackGradients> {
    bias_mode.validate(model.layers().len())?;
    let params = StackParams::from_stack(model)?;
    let mut grads = params.gradients(exec, batch, recon)?;
    for (k, g) in grads.lambdas.iter_mut().enumerate() {
        match bias_mode {
            BiasMode::FreeCnn => {}
            BiasMode::NegativeOnly { lambda_min } => {
                let l = &params.lambdas[k];
                for i in 0..g.len() {
                    if l[i] <= *lambda_min && g[i] > 0.0 {
                        g[i] = 0.0;
                    }
                }
            }
            BiasMode::SharedScalarFixed(_) => g.fill(0.0),
        }
    }
    Ok(grads)
}

/// `½‖x - a Φ₁a₁ - b Φ₁Φ₂a₂‖²`.
pub fn combined_recon_loss(
    phi1: &Dictionary,
    phi2: &Dictionary,
    a1: &DVector<f64>,
    a2: &DVector<f64>,
    sample: &Sample,
    a: f64,
    b: f64,
) -> Result<f64> {
    check_dim("sample length", phi1.input_dim(), sample.len())?;
    check_dim("a1 length", phi1.n_atoms(), a1.len())?;
    check_dim("layer-2 input dim", phi1.n_atoms(), phi2.input_dim())?;
    check_dim("a2 length", phi2.n_atoms(), a2.len())?;
    let inner = a1 * a + (phi2.matrix() * a2) * b;
    let e = sample.values() - phi1.matrix() * inner;
    Ok(0.5 * e.norm_squared())
}

/// Fraction of samples whose most probable class matches the label.
pub fn evaluate_accuracy(data: &[LabeledSample], model: &LayerStack) -> Result<f64> {
    if data.is_empty() {
        return Err(invalid("no samples"));
    }
    let params = StackParams::from_stack(model)?;
    let mut correct = 0usize;
    for s in data {
        let f = params.forward(s.input().values())?;
        if argmax(&f.probabilities) == s.label() {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub orthogonalize_each_step: bool,
    pub rng_seed: u64,
    pub recon: Option<ReconTerm>,
}

impl ClassifierConfig {
    pub fn new(rng_seed: u64) -> Self {
        ClassifierConfig {
            learning_rate: 0.1,
            batch_size: 32,
            epochs: 200,
            orthogonalize_each_step: false,
            rng_seed,
            recon: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierOutcome {
    pub model: LayerStack,
    /// Training accuracy after each epoch.
    pub accuracy_curve: Vec<f64>,
    /// Mean training loss after each epoch.
    pub loss_curve: Vec<f64>,
}

fn constrain(raw: DMatrix<f64>, orthogonalize: bool) -> Result<Dictionary> {
    if orthogonalize {
        svd_orthogonalize(&raw)
    } else {
        normalize_columns(&raw)
    }
}

fn rebuild(params: &StackParams, bias_mode: &BiasMode, orthogonalize: bool) -> Result<LayerStack> {
    let layers = params
        .dictionaries
        .iter()
        .zip(&params.lambdas)
        .map(|(d, l)| {
            Ok(Layer {
                dictionary: constrain(d.clone(), orthogonalize)?,
                reg: bias_mode.reg(l.clone())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LayerStack::new(layers, params.head_weights.clone(), params.head_bias.clone())
}

/// Minibatch gradient descent on the cross-entropy. After each step every Φ
/// is re-orthogonalized (or column-normalized) and λ projected per `bias_mode`.
pub fn train_classifier(
    data: &[LabeledSample],
    model_init: &LayerStack,
    bias_mode: &BiasMode,
    cfg: &ClassifierConfig,
) -> Result<ClassifierOutcome> {
    if data.is_empty() {
        return Err(invalid("no training data"));
    }
    if !(cfg.learning_rate > 0.0) || cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(invalid("learning rate, batch size and epochs must be positive"));
    }
    let exec = Exec::default();
    let mut model = bias_mode.apply(model_init)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut accuracy_curve = Vec::with_capacity(cfg.epochs);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let grads = backprop_grads_with(exec, &batch, &model, bias_mode, cfg.recon.as_ref())?;
            let mut params = StackParams::from_stack(&model)?;
            let mut g = grads;
            g.scale(-cfg.learning_rate);
            params.add_assign(&g);
            for (k, l) in params.lambdas.iter_mut().enumerate() {
                bias_mode.project(k, l);
            }
            if params.flatten().iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { epoch, step });
            }
            model = rebuild(&params, bias_mode, cfg.orthogonalize_each_step)?;
        }
        let params = StackParams::from_stack(&model)?;
        loss_curve.push(params.loss(data, cfg.recon.as_ref())?);
        accuracy_curve.push(evaluate_accuracy(data, &model)?);
    }
    Ok(ClassifierOutcome {
        model,
        accuracy_curve,
        loss_curve,
    })
}

/// Random stack: Gaussian dictionaries (orthogonalized or column-normalized),
/// λ at the mode's floor, small Gaussian head weights and zero head bias.
pub fn init_stack(
    input_dim: usize,
    widths: &[usize],
    classes: usize,
    bias_mode: &BiasMode,
    orthogonalize: bool,
    seed: u64,
) -> Result<LayerStack> {
    if widths.is_empty() || widths.contains(&0) || input_dim == 0 || classes == 0 {
        return Err(invalid("input dim, layer widths and class count must be positive"));
    }
    bias_mode.validate(widths.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
    let mut layers = Vec::new();
    let mut m = input_dim;
    for (k, &n) in widths.iter().enumerate() {
        let dictionary = constrain(gauss(m, n), orthogonalize)?;
        let mut l = DVector::zeros(n);
        if let BiasMode::NegativeOnly { lambda_min } = bias_mode {
            l.fill(*lambda_min);
        }
        bias_mode.project(k, &mut l);
        layers.push(Layer {
            dictionary,
            reg: bias_mode.reg(l)?,
        });
        m = n;
    }
    let w = gauss(classes, m) * 0.1;
    LayerStack::new(layers, w, DVector::zeros(classes))
}

/// Seeded isotropic Gaussian blobs, `per_class` samples around each center.
pub fn gaussian_blobs(centers: &[Vec<f64>], std_dev: f64, per_class: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    if centers.is_empty() {
        return Err(invalid("need at least one center"));
    }
    let dim = centers[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * centers.len());
    for _ in 0..per_class {
        for (label, c) in centers.iter().enumerate() {
            check_dim("center dimension", dim, c.len())?;
            let x: Vec<f64> = c
                .iter()
                .map(|v| v + std_dev * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            out.push(LabeledSample::from_label(Sample::from_slice(&x)?, label, centers.len())?);
        }
    }
    Ok(out)
}

/// Reads `label,x1,x2,...` rows; the class count is `max label + 1` unless
/// `classes` is given.
pub fn load_labeled_csv(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Vec<LabeledSample>> {
    let file = std::fs::File::open(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let label: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::Malformed(format!("line {}: bad label", lineno + 1)))?;
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Malformed(format!("line {}: {e}", lineno + 1)))?;
        rows.push((label, values));
    }
    if rows.is_empty() {
        return Err(Error::Malformed("no samples".into()));
    }
    let k = classes.unwrap_or_else(|| rows.iter().map(|r| r.0).max().unwrap_or(0) + 1);
    rows.into_iter()
        .map(|(label, values)| LabeledSample::from_label(Sample::from_slice(&values)?, label, k))
        .collect()
}

pub fn save_labeled_csv(path: impl AsRef<Path>, data: &[LabeledSample]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in data {
        write!(out, "{}", s.label())?;
        for v in s.input().values().iter() {
            write!(out, ",{v:?}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// OSM1 container: layer count, then per layer a sign-policy flag (0 free,
/// 1 non-negative), an OSC1 Φ block and an OSL1 λ block, then the OSH1 head weights and OSB1 head bias.
pub fn encode_model(model: &LayerStack) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.magic(&MODEL_MAGIC).dim(model.layers().len(), "layer count")?;
    for layer in model.layers() {
        let flag = match layer.reg.sign_policy() {
            SignPolicy::Free => 0,
            SignPolicy::NonNegativeOnly => 1,
        };
        w.dim(flag, "sign policy")?;
        let phi = layer.dictionary.matrix();
        w.matrix_block(&DICTIONARY_MAGIC, phi.nrows(), phi.ncols(), row_major(phi))?;
        let l = layer.reg.to_vector(layer.dictionary.n_atoms())?;
        w.matrix_block(&LAMBDA_MAGIC, 1, l.len(), l.iter().copied())?;
    }
    let hw = model.head_weights();
    w.matrix_block(&HEAD_WEIGHTS_MAGIC, hw.nrows(), hw.ncols(), row_major(hw))?;
    let hb = model.head_bias();
    w.matrix_block(&HEAD_BIAS_MAGIC, 1, hb.len(), hb.iter().copied())?;
    Ok(w.finish())
}

pub fn decode_model(bytes: &[u8]) -> Result<LayerStack> {
    let mut r = Reader::new(bytes);
    r.magic(&MODEL_MAGIC)?;
    let count = r.u32()?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let policy = match r.u32()? {
            0 => SignPolicy::Free,
            1 => SignPolicy::NonNegativeOnly,
            other => return Err(Error::Malformed(format!("unknown sign policy flag {other}"))),
        };
        let (rows, cols, values) = r.matrix_block(&DICTIONARY_MAGIC)?;
        let dictionary = Dictionary::from_matrix(from_row_major(rows, cols, &values))?;
        let (lr, _, lambdas) = r.matrix_block(&LAMBDA_MAGIC)?;
        if lr != 1 {
            return Err(Error::Malformed("lambda block must have one row".into()));
        }
        let lambdas = DVector::from_vec(lambdas);
        layers.push(Layer {
            dictionary,
            reg: RegCoeffs::per_unit(lambdas, policy)?,
        });
    }
    let (rows, cols, values) = r.matrix_block(&HEAD_WEIGHTS_MAGIC)?;
    let head_weights = from_row_major(rows, cols, &values);
    let (br, _, bias) = r.matrix_block(&HEAD_BIAS_MAGIC)?;
    if br != 1 {
        return Err(Error::Malformed("bias block must have one row".into()));
    }
    r.finish()?;
    LayerStack::new(layers, head_weights, DVector::from_vec(bias))
}

pub fn save_model(path: impl AsRef<Path>, model: &LayerStack) -> Result<()> {
    Ok(std::fs::write(path, encode_model(model)?)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LayerStack> {
    decode_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_identity_model() -> LayerStack {
        LayerStack::new(
            vec![Layer {
                dictionary: Dictionary::identity(2),
                reg: RegCoeffs::per_unit(DVector::zeros(2), SignPolicy::NonNegativeOnly).unwrap(),
            }],
            DMatrix::identity(2, 2),
            DVector::zeros(2),
        )
        .unwrap()
    }

    #[test]
    fn zero_logits_give_uniform() {
        let f = stack_forward(&single_identity_model(), &Sample::from_slice(&[0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(f.probabilities.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_limits_and_shift() {
        let y = softmax(&DVector::from_vec(vec![800.0, 0.0, 0.0]));
        assert!((y[0] - 1.0).abs() < 1e-15 && y[1] < 1e-300);
        let z = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let shifted = softmax(&z.add_scalar(123.4));
        assert!((softmax(&z) - shifted).amax() < 1e-12);
        assert!((softmax(&z).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_cases() {
        let model = single_identity_model();
        let uniform = vec![LabeledSample::from_label(Sample::from_slice(&[0.0, 0.0]).unwrap(), 1, 2).unwrap()];
        assert!((cross_entropy(&uniform, &model).unwrap() - 2f64.ln()).abs() < 1e-15);
        // near-perfect prediction
        let sure = vec![LabeledSample::from_label(Sample::from_slice(&[800.0, 0.0]).unwrap(), 0, 2).unwrap()];
        assert!(cross_entropy(&sure, &model).unwrap().abs() < 1e-12);
        let wrong = vec![LabeledSample::from_label(Sample::from_slice(&[800.0, 0.0]).unwrap(), 1, 2).unwrap()];
        let floored = cross_entropy(&wrong, &model).unwrap();
        assert!(floored.is_finite() && (floored + PROB_FLOOR.ln()).abs() < 1e-9 || (floored - 800.0).abs() < 1e-9);
    }

    #[test]
    fn labeled_sample_validation() {
        let x = Sample::from_slice(&[1.0]).unwrap();
        assert!(LabeledSample::new(x.clone(), &DVector::from_vec(vec![0.0, 1.0, 0.0])).is_ok());
        assert!(LabeledSample::new(x.clone(), &DVector::from_vec(vec![1.0, 1.0])).is_err());
        assert!(LabeledSample::new(x.clone(), &DVector::from_vec(vec![0.5, 0.5])).is_err());
        assert!(LabeledSample::from_label(x, 3, 3).is_err());
    }

    #[test]
    fn dead_first_layer_has_zero_gradient() {
        let mut model = single_identity_model();
        model = LayerStack::new(
            vec![Layer {
                dictionary: Dictionary::identity(2),
                reg: RegCoeffs::per_unit(DVector::from_vec(vec![10.0, 10.0]), SignPolicy::NonNegativeOnly).unwrap(),
            }],
            model.head_weights().clone(),
            model.head_bias().clone(),
        )
        .unwrap();
        let batch = vec![LabeledSample::from_label(Sample::from_slice(&[1.0, -1.0]).unwrap(), 0, 2).unwrap()];
        let g = backprop_grads(&batch, &model, &BiasMode::FreeCnn).unwrap();
        assert_eq!(g.dictionaries[0].amax(), 0.0);
        assert_eq!(g.lambdas[0].amax(), 0.0);
    }

    #[test]
    fn reconstruction_term_gradient_matches_fd() {
        let mode = BiasMode::FreeCnn;
        let model = init_stack(4, &[3, 2], 3, &mode, true, 21).unwrap();
        let mut params = StackParams::from_stack(&model).unwrap();
        params.lambdas[0] = DVector::from_vec(vec![-0.3, -0.2, -0.25]);
        params.lambdas[1] = DVector::from_vec(vec![-0.2, -0.1]);
        let batch = gaussian_blobs(&[vec![1.0, 0.5, 0.0, -0.2], vec![-0.5, 0.2, 1.0, 0.3], vec![0.0, -1.0, 0.4, 0.8]], 0.3, 2, 4).unwrap();
        let rt = ReconTerm { gamma: 0.7, a: 0.8, b: 0.5 };
        let g = params.gradients(Exec::Sequential, &batch, Some(&rt)).unwrap();
        let flat = g.flatten();
        let h = 1e-6;
        for (k, &gk) in flat.iter().enumerate() {
            let mut p = params.clone();
            *p.flat_mut(k) += h;
            let up = p.loss(&batch, Some(&rt)).unwrap();
            *p.flat_mut(k) -= 2.0 * h;
            let down = p.loss(&batch, Some(&rt)).unwrap();
            let fd = (up - down) / (2.0 * h);
            assert!((fd - gk).abs() <= 1e-6 * (1.0 + fd.abs()), "param {k}: fd {fd} vs {gk}");
        }
    }

    #[test]
    fn fixed_mode_freezes_lambda() {
        let mode = BiasMode::SharedScalarFixed(vec![0.2]);
        let model = init_stack(2, &[3], 2, &mode, false, 1).unwrap();
        let data = gaussian_blobs(&[vec![1.0, 0.0], vec![-1.0, 0.0]], 0.3, 10, 2).unwrap();
        let mut cfg = ClassifierConfig::new(3);
        cfg.epochs = 5;
        let out = train_classifier(&data, &model, &mode, &cfg).unwrap();
        for layer in out.model.layers() {
            assert!(layer.reg.to_vector(3).unwrap().iter().all(|v| *v == 0.2));
        }
        let g = backprop_grads(&data, &out.model, &mode).unwrap();
        assert_eq!(g.lambdas[0].amax(), 0.0);
    }

    #[test]
    fn combined_recon_cases() {
        let phi = Dictionary::identity(2);
        let x = Sample::from_slice(&[1.0, 2.0]).unwrap();
        let a1 = DVector::from_vec(vec![0.5, 0.5]);
        let a2 = DVector::from_vec(vec![1.0, 0.0]);
        // b = 0: layer-1 term only
        let l = combined_recon_loss(&phi, &phi, &a1, &a2, &x, 1.0, 0.0).unwrap();
        assert!((l - 0.5 * (0.25 + 2.25)).abs() < 1e-15);
        // a = 0, identities: ½‖x - b a2‖²
        let l = combined_recon_loss(&phi, &phi, &a1, &a2, &x, 0.0, 1.0).unwrap();
        assert!((l - 0.5 * (0.0 + 4.0)).abs() < 1e-15);
        assert!(combined_recon_loss(&phi, &phi, &a2, &DVector::zeros(3), &x, 1.0, 1.0).is_err());
    }

    #[test]
    fn accuracy_tally() {
        let model = single_identity_model();
        let mk = |x: [f64; 2], l: usize| LabeledSample::from_label(Sample::from_slice(&x).unwrap(), l, 2).unwrap();
        // predictions: argmax of relu(x): [1,0]→0, [0,1]→1, [0,0]→0 (tie), [2,1]→0, [0,3]→1
        let data = vec![mk([1.0, 0.0], 0), mk([0.0, 1.0], 0), mk([0.0, 0.0], 0), mk([2.0, 1.0], 1), mk([0.0, 3.0], 1)];
        assert!((evaluate_accuracy(&data, &model).unwrap() - 3.0 / 5.0).abs() < 1e-15);
        assert!(evaluate_accuracy(&[], &model).is_err());
    }

    #[test]
    fn model_round_trip_and_errors() {
        let model = init_stack(3, &[2, 2], 2, &BiasMode::FreeCnn, false, 8).unwrap();
        let bytes = encode_model(&model).unwrap();
        assert_eq!(decode_model(&bytes).unwrap(), model);
        assert!(decode_model(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_model(&bad), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        let data = gaussian_blobs(&[vec![0.0, 1.0], vec![1.0, 0.0]], 0.5, 3, 1).unwrap();
        save_labeled_csv(&path, &data).unwrap();
        assert_eq!(load_labeled_csv(&path, None).unwrap(), data);
    }
}
