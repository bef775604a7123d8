//! Dictionary learning through the closed-form inference transform.
//!
//! The loss `½‖x - Φ s(Φᵀx)‖² + penalty(s)` is differentiated through the
//! piecewise-linear transform `s` using its almost-everywhere derivative, and
//! each gradient step is followed by re-orthogonalization (or column
//! normalization).

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::PatchSet;
use crate::error::{check_dim, invalid, Error, Result};
use crate::inference::{relu_shift, shrink};
use crate::par::{chunked_fold, map_indices, Exec, REDUCE_CHUNK};
use crate::types::{Dictionary, Lambda, RegCoeffs, Sample, SignPolicy};

/// Singular values at or below this are treated as zero.
pub const RANK_TOL: f64 = 1e-12;
/// Spectral-centroid cut (fraction of Nyquist) above which a basis function
/// counts as high spatial frequency.
pub const HIGH_FREQ_THRESHOLD: f64 = 0.35;

/// Random-access batch of samples, all of the same dimension.
pub trait SampleSource: Sync {
    fn count(&self) -> usize;
    fn dim(&self) -> usize;
    fn sample(&self, i: usize) -> DVectorView<'_, f64>;
}

impl SampleSource for [Sample] {
    fn count(&self) -> usize {
        self.len()
    }

    fn dim(&self) -> usize {
        self.first().map_or(0, Sample::len)
    }

    fn sample(&self, i: usize) -> DVectorView<'_, f64> {
        self[i].values().as_view()
    }
}

impl SampleSource for PatchSet {
    fn count(&self) -> usize {
        self.len()
    }

    fn dim(&self) -> usize {
        PatchSet::dim(self)
    }

    fn sample(&self, i: usize) -> DVectorView<'_, f64> {
        DVectorView::from_slice(self.patch(i), PatchSet::dim(self))
    }
}

/// A subset of another source, addressed through an index list.
pub struct Subset<'a, S: SampleSource + ?Sized> {
    pub source: &'a S,
    pub indices: &'a [usize],
}

impl<S: SampleSource + ?Sized> SampleSource for Subset<'_, S> {
    fn count(&self) -> usize {
        self.indices.len()
    }

    fn dim(&self) -> usize {
        self.source.dim()
    }

    fn sample(&self, i: usize) -> DVectorView<'_, f64> {
        self.source.sample(self.indices[i])
    }
}

#[derive(Debug, Clone)]
enum Transform {
    Soft(f64),
    Clamp(DVector<f64>),
}

impl Transform {
    fn from_reg(reg: &RegCoeffs, n: usize) -> Result<Self> {
        match (reg.lambda(), reg.sign_policy()) {
            (Lambda::Shared(l), SignPolicy::Free) => Ok(Transform::Soft(*l)),
            _ => Ok(Transform::Clamp(reg.to_vector(n)?)),
        }
    }
}

struct Encoded {
    coeffs: DVector<f64>,
    residual: DVector<f64>,
    loss: f64,
}

fn encode(phi: &DMatrix<f64>, x: &DVectorView<f64>, transform: &Transform) -> Encoded {
    let p = phi.tr_mul(x);
    let (coeffs, penalty) = match transform {
        Transform::Soft(l) => {
            let a = p.map(|v| shrink(v, *l));
            let pen = l * a.iter().map(|v| v.abs()).sum::<f64>();
            (a, pen)
        }
        Transform::Clamp(ls) => {
            let a = p.zip_map(ls, relu_shift);
            let pen = a.dot(ls);
            (a, pen)
        }
    };
    let residual = x - phi * &coeffs;
    let loss = 0.5 * residual.norm_squared() + penalty;
    Encoded {
        coeffs,
        residual,
        loss,
    }
}

fn check_batch<S: SampleSource + ?Sized>(phi: &DMatrix<f64>, batch: &S) -> Result<()> {
    if batch.count() == 0 {
        return Err(invalid("batch is empty"));
    }
    check_dim("sample length", phi.nrows(), batch.dim())
}

fn loss_raw<S: SampleSource + ?Sized>(exec: Exec, phi: &DMatrix<f64>, batch: &S, transform: &Transform) -> f64 {
    let total = chunked_fold(
        exec,
        batch.count(),
        REDUCE_CHUNK,
        |r| r.map(|i| encode(phi, &batch.sample(i), transform).loss).sum::<f64>(),
        |a, b| *a += b,
    )
    .unwrap_or(0.0);
    total / batch.count() as f64
}

fn gradient_raw<S: SampleSource + ?Sized>(exec: Exec, phi: &DMatrix<f64>, batch: &S, transform: &Transform) -> (DMatrix<f64>, f64) {
    let (m, n) = phi.shape();
    let (grad, loss) = chunked_fold(
        exec,
        batch.count(),
        REDUCE_CHUNK,
        |range| {
            let mut g = DMatrix::zeros(m, n);
            let mut loss = 0.0;
            for i in range {
                let x = batch.sample(i);
                let enc = encode(phi, &x, transform);
                loss += enc.loss;
                // dL/dp through the active region of s
                let back = phi.tr_mul(&enc.residual);
                let dp = DVector::from_fn(n, |j, _| {
                    let a = enc.coeffs[j];
                    if a == 0.0 {
                        return 0.0;
                    }
                    let pen = match transform {
                        Transform::Soft(l) => l * a.signum(),
                        Transform::Clamp(ls) => ls[j],
                    };
                    pen - back[j]
                });
                // direct term: -r aᵀ ; through p = Φᵀx: x dpᵀ
                g.ger(-1.0, &enc.residual, &enc.coeffs, 1.0);
                g.ger(1.0, &x, &dp, 1.0);
            }
            (g, loss)
        },
        |acc, (g, l)| {
            acc.0 += g;
            acc.1 += l;
        },
    )
    .unwrap_or_else(|| (DMatrix::zeros(m, n), 0.0));
    let scale = 1.0 / batch.count() as f64;
    (grad * scale, loss * scale)
}

/// Mean reconstruction loss over the batch with the inference transform
/// selected by `reg` (soft-threshold for a shared free-sign λ, one-sided
/// clamp otherwise) and penalty `λ‖s‖₁` or `λᵀs`.
pub fn recon_loss<S: SampleSource + ?Sized>(phi: &Dictionary, batch: &S, reg: &RegCoeffs) -> Result<f64> {
    recon_loss_matrix(phi.matrix(), batch, reg)
}

/// [`recon_loss`] for an unconstrained matrix.
pub fn recon_loss_matrix<S: SampleSource + ?Sized>(phi: &DMatrix<f64>, batch: &S, reg: &RegCoeffs) -> Result<f64> {
    check_batch(phi, batch)?;
    let transform = Transform::from_reg(reg, phi.ncols())?;
    Ok(loss_raw(Exec::default(), phi, batch, &transform))
}

/// Gradient of [`recon_loss`] with respect to Φ.
pub fn dict_gradient<S: SampleSource + ?Sized>(phi: &Dictionary, batch: &S, reg: &RegCoeffs) -> Result<DMatrix<f64>> {
    dict_gradient_with(Exec::default(), phi.matrix(), batch, reg)
}

/// [`dict_gradient`] for an unconstrained matrix with explicit execution mode.
pub fn dict_gradient_with<S: SampleSource + ?Sized>(
    exec: Exec,
    phi: &DMatrix<f64>,
    batch: &S,
    reg: &RegCoeffs,
) -> Result<DMatrix<f64>> {
    check_batch(phi, batch)?;
    let transform = Transform::from_reg(reg, phi.ncols())?;
    Ok(gradient_raw(exec, phi, batch, &transform).0)
}

/// Central finite differences of [`recon_loss`], entry by entry.
pub fn finite_diff_gradient<S: SampleSource + ?Sized>(
    phi: &Dictionary,
    batch: &S,
    reg: &RegCoeffs,
    h: f64,
) -> Result<DMatrix<f64>> {
    finite_diff_gradient_matrix(phi.matrix(), batch, reg, h)
}

pub fn finite_diff_gradient_matrix<S: SampleSource + ?Sized>(
    phi: &DMatrix<f64>,
    batch: &S,
    reg: &RegCoeffs,
    h: f64,
) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(invalid(format!("step h must be > 0, got {h}")));
    }
    check_batch(phi, batch)?;
    let transform = Transform::from_reg(reg, phi.ncols())?;
    let (m, n) = phi.shape();
    let entries = map_indices(Exec::default(), m * n, |k| {
        let (i, j) = (k % m, k / m);
        let mut plus = phi.clone();
        plus[(i, j)] += h;
        let mut minus = phi.clone();
        minus[(i, j)] -= h;
        (loss_raw(Exec::Sequential, &plus, batch, &transform)
            - loss_raw(Exec::Sequential, &minus, batch, &transform))
            / (2.0 * h)
    });
    Ok(DMatrix::from_vec(m, n, entries))
}

/// Symmetric orthogonalization `Φ V Σ⁻¹ Vᵀ = Φ(ΦᵀΦ)^(-1/2)` from the thin SVD
/// `Φ = U Σ Vᵀ`. This is the orthonormal matrix closest to Φ, so an already
/// orthonormal input is returned unchanged.
pub fn svd_orthogonalize(phi: &DMatrix<f64>) -> Result<Dictionary> {
    let (m, n) = phi.shape();
    if m == 0 || n == 0 {
        return Err(invalid("cannot orthogonalize an empty matrix"));
    }
    if !phi.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("dictionary"));
    }
    if n > m {
        return Err(invalid(format!(
            "{n} basis functions cannot be orthonormal in {m} dimensions"
        )));
    }
    let svd = phi.clone().svd(true, true);
    let near_zero: Vec<(usize, f64)> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= RANK_TOL)
        .map(|(i, s)| (i, *s))
        .collect();
    if !near_zero.is_empty() {
        return Err(Error::RankDeficient { near_zero });
    }
    let u = svd.u.as_ref().expect("svd computed with U");
    let v_t = svd.v_t.as_ref().expect("svd computed with Vᵀ");
    Dictionary::orthogonal(u * v_t)
}

/// Rescales each column to unit Euclidean norm.
pub fn normalize_columns(phi: &DMatrix<f64>) -> Result<Dictionary> {
    let mut out = phi.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let norm = col.norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite("dictionary"));
        }
        if norm == 0.0 {
            return Err(Error::ZeroColumn(j));
        }
        col /= norm;
    }
    Dictionary::from_matrix(out)
}

/// Flips column signs so each column's largest-magnitude entry is positive.
/// Used for display; sign flips change the non-negative model.
pub fn canonicalize_signs(phi: &Dictionary) -> Dictionary {
    let mut m = phi.matrix().clone();
    for mut col in m.column_iter_mut() {
        let pivot = col.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
    Dictionary::from_matrix(m).expect("sign flips preserve the dictionary invariants")
}

/// Seeded i.i.d. Gaussian matrix, orthogonalized (or column-normalized when
/// n > m).
pub fn init_dictionary(m: usize, n: usize, seed: u64) -> Result<Dictionary> {
    if m == 0 || n == 0 {
        return Err(invalid("dictionary dims must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng));
    if n <= m {
        svd_orthogonalize(&raw)
    } else {
        normalize_columns(&raw)
    }
}

/// One gradient step followed by the constraint projection.
pub fn train_step<S: SampleSource + ?Sized>(
    phi: &Dictionary,
    batch: &S,
    reg: &RegCoeffs,
    learning_rate: f64,
    orthogonalize: bool,
) -> Result<Dictionary> {
    let grad = dict_gradient(phi, batch, reg)?;
    project_step(phi.matrix() - grad * learning_rate, orthogonalize)
}

fn project_step(raw: DMatrix<f64>, orthogonalize: bool) -> Result<Dictionary> {
    if orthogonalize {
        svd_orthogonalize(&raw)
    } else {
        normalize_columns(&raw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub reg: RegCoeffs,
    pub orthogonalize_each_step: bool,
    pub rng_seed: u64,
}

impl TrainConfig {
    /// Plain minibatch gradient descent: lr 1e-2, batch 100, 20 epochs,
    /// orthogonalization after every step.
    pub fn new(reg: RegCoeffs, rng_seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 100,
            epochs: 20,
            reg,
            orthogonalize_each_step: true,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid("learning rate must be > 0"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(invalid("batch size and epochs must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub dictionary: Dictionary,
    /// Mean loss over the full data set: entry 0 before training, then one
    /// entry per epoch.
    pub loss_curve: Vec<f64>,
    /// Worst `max |ΦᵀΦ - I|` observed after any step (orthogonalizing runs).
    pub max_orthogonality_error: f64,
    pub steps: usize,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.loss_curve[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_curve.last().expect("loss curve is never empty")
    }
}

/// Minibatch gradient descent on the reconstruction loss. Each epoch visits
/// the data in a seeded random order.
pub fn train_dictionary<S: SampleSource + ?Sized>(init: &Dictionary, data: &S, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_batch(init.matrix(), data)?;
    let transform = Transform::from_reg(&cfg.reg, init.n_atoms())?;
    let exec = Exec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut phi = init.clone();
    let initial = loss_raw(exec, phi.matrix(), data, &transform);
    if !initial.is_finite() {
        return Err(Error::Diverged { epoch: 0, step: 0 });
    }
    let mut loss_curve = vec![initial];
    let mut order: Vec<usize> = (0..data.count()).collect();
    let mut max_orth = 0.0f64;
    let mut steps = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Subset {
                source: data,
                indices: chunk,
            };
            let (grad, batch_loss) = gradient_raw(exec, phi.matrix(), &batch, &transform);
            if !batch_loss.is_finite() || !grad.iter().all(|v| v.is_finite()) {
                return Err(Error::Diverged { epoch, step: steps });
            }
            phi = project_step(phi.matrix() - grad * cfg.learning_rate, cfg.orthogonalize_each_step)
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged { epoch, step: steps },
                    other => other,
                })?;
            if cfg.orthogonalize_each_step {
                max_orth = max_orth.max(phi.orthogonality_error());
            }
            steps += 1;
        }
        let loss = loss_raw(exec, phi.matrix(), data, &transform);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, step: steps });
        }
        loss_curve.push(loss);
    }
    Ok(TrainOutcome {
        dictionary: phi,
        loss_curve,
        max_orthogonality_error: max_orth,
        steps,
    })
}

/// Radial spectral centroid of a `side × side` basis function as a fraction
/// of the Nyquist frequency.
pub fn spectral_centroid(column: &[f64], side: usize) -> Result<f64> {
    check_dim("basis function length", side * side, column.len())?;
    let freq = |k: usize| k.min(side - k) as f64 / side as f64;
    let tau = std::f64::consts::TAU;
    let mut weighted = 0.0;
    let mut total = 0.0;
    for ky in 0..side {
        for kx in 0..side {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..side {
                for x in 0..side {
                    let phase = -tau * ((kx * x) as f64 + (ky * y) as f64) / side as f64;
                    let v = column[y * side + x];
                    re += v * phase.cos();
                    im += v * phase.sin();
                }
            }
            let power = re * re + im * im;
            let radius = (freq(kx).powi(2) + freq(ky).powi(2)).sqrt() / 0.5;
            weighted += radius * power;
            total += power;
        }
    }
    Ok(if total > 0.0 { weighted / total } else { 0.0 })
}

/// Number of basis functions whose spectral centroid exceeds `threshold`.
pub fn high_frequency_count(phi: &Dictionary, side: usize, threshold: f64) -> Result<usize> {
    check_dim("basis function length", side * side, phi.input_dim())?;
    let counts = map_indices(Exec::default(), phi.n_atoms(), |j| {
        let col: Vec<f64> = phi.matrix().column(j).iter().copied().collect();
        spectral_centroid(&col, side).map(|c| usize::from(c > threshold))
    });
    counts.into_iter().sum()
}
