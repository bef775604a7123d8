//! Coefficient inference.
//!
//! Closed forms for orthogonal dictionaries (soft-threshold, shifted ReLU,
//! ridge scaling, top-k), a proximal-gradient solver for arbitrary
//! dictionaries, and a perturbation-based optimality check.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Error, Result};
use crate::par::{map_indices, Exec};
use crate::types::{CoeffVector, Dictionary, Lambda, RegCoeffs, Sample, SignPolicy};

/// Default fixed-point tolerance of the iterative solvers.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration cap of the iterative solvers.
pub const DEFAULT_MAX_ITER: usize = 20_000;
const POWER_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    pub final_loss: f64,
    /// Fixed-point residual `‖a - prox(a - ∇g(a)/L)‖∞` at the returned iterate.
    pub residual: f64,
    pub converged: bool,
}

#[inline]
pub(crate) fn shrink(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn relu_shift(x: f64, lambda: f64) -> f64 {
    // written as a comparison so the boundary x == lambda maps to exactly 0
    if x > lambda {
        x - lambda
    } else {
        0.0
    }
}

/// Soft-threshold `s(x) = sign(x) max(|x| - λ, 0)`.
pub fn soft_threshold(x: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(invalid(format!("soft-threshold needs lambda >= 0, got {lambda}")));
    }
    Ok(shrink(x, lambda))
}

fn projection(phi: &Dictionary, sample: &Sample) -> Result<DVector<f64>> {
    phi.project(sample.values())
}

/// Orthogonal LASSO: `â_i = s(Φ_iᵀ x, λ)`.
pub fn orth_lasso_infer(phi: &Dictionary, sample: &Sample, reg: &RegCoeffs) -> Result<CoeffVector> {
    phi.require_orthogonal()?;
    let lambda = match (reg.lambda(), reg.sign_policy()) {
        (Lambda::Shared(l), SignPolicy::Free) => *l,
        _ => return Err(invalid("orth_lasso_infer needs a shared lambda with free sign")),
    };
    let p = projection(phi, sample)?;
    CoeffVector::new(p.map(|v| shrink(v, lambda)))
}

/// Orthogonal non-negative sparse coding: `â_i = max(0, Φ_iᵀ x - λ)`.
pub fn orth_nonneg_infer(phi: &Dictionary, sample: &Sample, reg: &RegCoeffs) -> Result<CoeffVector> {
    phi.require_orthogonal()?;
    let lambda = match (reg.lambda(), reg.sign_policy()) {
        (Lambda::Shared(l), SignPolicy::NonNegativeOnly) => *l,
        _ => {
            return Err(invalid(
                "orth_nonneg_infer needs a shared lambda with the NonNegativeOnly policy",
            ))
        }
    };
    if !(lambda > 0.0) {
        return Err(invalid("non-negative inference needs lambda > 0"));
    }
    let p = projection(phi, sample)?;
    CoeffVector::new(p.map(|v| relu_shift(v, lambda)))
}

/// Per-unit forward transform `â_i = max(0, Φ_iᵀ x - λ_i)`: a dense layer with
/// weights Φᵀ, bias -λ and ReLU activation. Negative λ_i are accepted only
/// under [`SignPolicy::Free`] and mark the result as non-probabilistic.
pub fn per_unit_forward(phi: &Dictionary, sample: &Sample, reg: &RegCoeffs) -> Result<CoeffVector> {
    phi.require_orthogonal()?;
    let lambdas = reg.to_vector(phi.n_atoms())?;
    let p = projection(phi, sample)?;
    relu_layer_out(&p, &lambdas, !reg.has_negative())
}

fn relu_layer_out(p: &DVector<f64>, lambdas: &DVector<f64>, probabilistic: bool) -> Result<CoeffVector> {
    let out = p.zip_map(lambdas, relu_shift);
    CoeffVector::with_flag(out, probabilistic)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Domain {
    Free,
    NonNegative,
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub(crate) fn power_iteration(gram: &DMatrix<f64>, steps: usize) -> f64 {
    let n = gram.nrows();
    // fixed, generic start vector so the estimate is deterministic
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.25 * ((i as f64) * 1.618_033_988_75 + 0.5).sin());
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..steps {
        let w = gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = v.dot(&w);
        v = w / norm;
    }
    estimate.max((gram * &v).dot(&v))
}

fn objective_raw(phi: &DMatrix<f64>, x: &DVector<f64>, lambdas: &DVector<f64>, a: &DVector<f64>, domain: Domain) -> f64 {
    let r = x - phi * a;
    let penalty: f64 = match domain {
        Domain::Free => a.iter().zip(lambdas.iter()).map(|(v, l)| l * v.abs()).sum(),
        Domain::NonNegative => {
            if a.iter().any(|v| *v < 0.0) {
                return f64::INFINITY;
            }
            a.iter().zip(lambdas.iter()).map(|(v, l)| l * v).sum()
        }
    };
    0.5 * r.norm_squared() + penalty
}

fn prox(v: &DVector<f64>, thresholds: &DVector<f64>, domain: Domain) -> DVector<f64> {
    match domain {
        Domain::Free => v.zip_map(thresholds, shrink),
        Domain::NonNegative => v.zip_map(thresholds, relu_shift),
    }
}

fn prox_gradient(
    phi: &DMatrix<f64>,
    x: &DVector<f64>,
    lambdas: &DVector<f64>,
    domain: Domain,
    tol: f64,
    max_iter: usize,
) -> (DVector<f64>, SolverReport) {
    let n = phi.ncols();
    let gram = phi.tr_mul(phi);
    let b = phi.tr_mul(x);
    let lipschitz = power_iteration(&gram, POWER_ITERATIONS);
    let lipschitz = if lipschitz > 0.0 { lipschitz } else { 1.0 };
    let step = 1.0 / lipschitz;
    let thresholds = lambdas * step;

    let grad = |a: &DVector<f64>| &gram * a - &b;
    let residual_at = |a: &DVector<f64>| {
        let fixed = prox(&(a - grad(a) * step), &thresholds, domain);
        (a - fixed).amax()
    };

    let mut a = DVector::zeros(n);
    let mut y = a.clone();
    let mut t = 1.0f64;
    let mut best = a.clone();
    let mut best_loss = objective_raw(phi, x, lambdas, &a, domain);
    let mut residual = residual_at(&a);
    let mut iterations = 0;
    let mut converged = residual <= tol;

    while !converged && iterations < max_iter {
        iterations += 1;
        let next = prox(&(&y - grad(&y) * step), &thresholds, domain);
        // gradient-based adaptive restart
        let restart = (&y - &next).dot(&(&next - &a)) > 0.0;
        let t_next = if restart { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        let momentum = if restart { 0.0 } else { (t - 1.0) / t_next };
        y = &next + (&next - &a) * momentum;
        a = next;
        t = t_next;

        let loss = objective_raw(phi, x, lambdas, &a, domain);
        residual = residual_at(&a);
        if loss <= best_loss {
            best_loss = loss;
            best.copy_from(&a);
        }
        if residual <= tol {
            converged = true;
            best.copy_from(&a);
            best_loss = loss;
        }
    }
    if !converged {
        residual = residual_at(&best);
    }
    (
        best,
        SolverReport {
            iterations,
            final_loss: best_loss,
            residual,
            converged,
        },
    )
}

fn check_solver_args(phi: &Dictionary, sample: &Sample, tol: f64) -> Result<()> {
    check_dim("sample length", phi.input_dim(), sample.len())?;
    if !(tol > 0.0) {
        return Err(invalid(format!("tolerance must be > 0, got {tol}")));
    }
    Ok(())
}

/// General LASSO `min ½‖x - Φa‖² + λ‖a‖₁` by accelerated proximal gradient
/// with step 1/L. Non-convergence is reported, not an error; the best iterate
/// is returned.
pub fn lasso_iterative(
    phi: &Dictionary,
    sample: &Sample,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(CoeffVector, SolverReport)> {
    check_solver_args(phi, sample, tol)?;
    if !(lambda >= 0.0) {
        return Err(invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let lambdas = DVector::from_element(phi.n_atoms(), lambda);
    let (a, report) = prox_gradient(phi.matrix(), sample.values(), &lambdas, Domain::Free, tol, max_iter);
    Ok((CoeffVector::new(a)?, report))
}

/// Non-negative LASSO `min ½‖x - Φa‖² + λ Σ a_i` over `a ≥ 0`, by projected
/// proximal gradient.
pub fn nonneg_lasso_iterative(
    phi: &Dictionary,
    sample: &Sample,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(CoeffVector, SolverReport)> {
    if !(lambda >= 0.0) {
        return Err(invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let lambdas = DVector::from_element(phi.n_atoms(), lambda);
    nonneg_lasso_iterative_per_unit(phi, sample, &lambdas, tol, max_iter)
}

/// Non-negative sparse coding with one λ_i per unit.
pub fn nonneg_lasso_iterative_per_unit(
    phi: &Dictionary,
    sample: &Sample,
    lambdas: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(CoeffVector, SolverReport)> {
    check_solver_args(phi, sample, tol)?;
    check_dim("lambda vector length", phi.n_atoms(), lambdas.len())?;
    if !lambdas.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("lambda"));
    }
    let (a, report) = prox_gradient(phi.matrix(), sample.values(), lambdas, Domain::NonNegative, tol, max_iter);
    let probabilistic = lambdas.iter().all(|v| *v >= 0.0);
    Ok((CoeffVector::with_flag(a, probabilistic)?, report))
}

/// Ridge regression `(ΦᵀΦ + λI)⁻¹ Φᵀx`, λ > 0.
pub fn ridge_closed_form(phi: &Dictionary, sample: &Sample, lambda: f64) -> Result<CoeffVector> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("ridge needs lambda > 0, got {lambda}")));
    }
    let m = phi.matrix();
    let rhs = phi.project(sample.values())?;
    let mut system = m.tr_mul(m);
    for i in 0..system.nrows() {
        system[(i, i)] += lambda;
    }
    let chol = system
        .cholesky()
        .ok_or_else(|| invalid("ridge system is not positive definite"))?;
    CoeffVector::new(chol.solve(&rhs))
}

/// Orthogonal ridge regression `Φᵀx / (1 + λ)`, λ ≥ 0.
pub fn ridge_orthogonal(phi: &Dictionary, sample: &Sample, lambda: f64) -> Result<CoeffVector> {
    phi.require_orthogonal()?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("ridge needs lambda >= 0, got {lambda}")));
    }
    let p = projection(phi, sample)?;
    CoeffVector::new(p / (1.0 + lambda))
}

/// Indices of the `k` largest `|p_i|`, ties broken by the lower index.
pub(crate) fn top_k_indices(p: &DVector<f64>, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].abs().total_cmp(&p[a].abs()).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Orthogonal L0 inference with a cardinality budget: keep the `k` entries of
/// Φᵀx with the largest magnitude, zero the rest.
pub fn l0_orthogonal_infer(phi: &Dictionary, sample: &Sample, k: usize) -> Result<CoeffVector> {
    phi.require_orthogonal()?;
    if k > phi.n_atoms() {
        return Err(invalid(format!("k = {k} exceeds the number of basis functions {}", phi.n_atoms())));
    }
    let p = projection(phi, sample)?;
    let mut out = DVector::zeros(p.len());
    for i in top_k_indices(&p, k) {
        out[i] = p[i];
    }
    CoeffVector::new(out)
}

/// Penalized orthogonal L0 (`½‖x - Φa‖² + λ‖a‖₀`): hard threshold at √(2λ).
pub fn l0_hard_threshold(phi: &Dictionary, sample: &Sample, lambda: f64) -> Result<CoeffVector> {
    phi.require_orthogonal()?;
    if !(lambda >= 0.0) {
        return Err(invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let cut = (2.0 * lambda).sqrt();
    let p = projection(phi, sample)?;
    CoeffVector::new(p.map(|v| if v.abs() > cut { v } else { 0.0 }))
}

/// Value of the sparse coding objective selected by `reg` at `a`:
/// `½‖x - Φa‖² + λ‖a‖₁` for a shared free-sign λ, otherwise
/// `½‖x - Φa‖² + λᵀa` on `a ≥ 0` (infinite outside the domain).
pub fn sparse_objective(phi: &Dictionary, sample: &Sample, reg: &RegCoeffs, a: &DVector<f64>) -> Result<f64> {
    check_dim("sample length", phi.input_dim(), sample.len())?;
    check_dim("coefficient length", phi.n_atoms(), a.len())?;
    let lambdas = reg.to_vector(phi.n_atoms())?;
    let domain = if reg.is_nonnegative_model() { Domain::NonNegative } else { Domain::Free };
    Ok(objective_raw(phi.matrix(), sample.values(), &lambdas, a, domain))
}

/// Perturbation test of `0 ∈ ∂f(a)`: for each coordinate, moving by ±eps
/// (clamped to the non-negative domain where applicable) must not lower the
/// objective by more than 1e-12.
pub fn check_subdifferential_optimality(
    phi: &Dictionary,
    sample: &Sample,
    reg: &RegCoeffs,
    a: &CoeffVector,
    eps: f64,
) -> Result<bool> {
    if !(eps > 0.0) {
        return Err(invalid(format!("eps must be > 0, got {eps}")));
    }
    let nonneg = reg.is_nonnegative_model();
    let base = sparse_objective(phi, sample, reg, a.values())?;
    if !base.is_finite() {
        return Ok(false);
    }
    let mut probe = a.values().clone();
    for j in 0..probe.len() {
        let original = probe[j];
        for delta in [eps, -eps] {
            let mut moved = original + delta;
            if nonneg && moved < 0.0 {
                moved = 0.0;
            }
            if moved == original {
                continue;
            }
            probe[j] = moved;
            let value = sparse_objective(phi, sample, reg, &probe)?;
            probe[j] = original;
            if value < base - 1e-12 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    /// Closed form; needs an orthogonal dictionary.
    Closed,
    /// General-dictionary solver.
    Iterative,
}

/// Inference problem selector used by batch inference and the CLI.
#[derive(Debug, Clone, PartialEq)]
pub enum InferenceMode {
    Lasso(f64),
    NonNeg(f64),
    PerUnit(RegCoeffs),
    Ridge(f64),
    L0(usize),
}

pub fn infer(phi: &Dictionary, sample: &Sample, mode: &InferenceMode, solver: Solver) -> Result<CoeffVector> {
    match (mode, solver) {
        (InferenceMode::Lasso(l), Solver::Closed) => {
            orth_lasso_infer(phi, sample, &RegCoeffs::shared(*l, SignPolicy::Free)?)
        }
        (InferenceMode::Lasso(l), Solver::Iterative) => {
            Ok(lasso_iterative(phi, sample, *l, DEFAULT_TOL, DEFAULT_MAX_ITER)?.0)
        }
        (InferenceMode::NonNeg(l), Solver::Closed) => {
            orth_nonneg_infer(phi, sample, &RegCoeffs::shared(*l, SignPolicy::NonNegativeOnly)?)
        }
        (InferenceMode::NonNeg(l), Solver::Iterative) => {
            Ok(nonneg_lasso_iterative(phi, sample, *l, DEFAULT_TOL, DEFAULT_MAX_ITER)?.0)
        }
        (InferenceMode::PerUnit(reg), Solver::Closed) => per_unit_forward(phi, sample, reg),
        (InferenceMode::PerUnit(reg), Solver::Iterative) => {
            let lambdas = reg.to_vector(phi.n_atoms())?;
            Ok(nonneg_lasso_iterative_per_unit(phi, sample, &lambdas, DEFAULT_TOL, DEFAULT_MAX_ITER)?.0)
        }
        (InferenceMode::Ridge(l), Solver::Closed) => ridge_orthogonal(phi, sample, *l),
        (InferenceMode::Ridge(l), Solver::Iterative) => ridge_closed_form(phi, sample, *l),
        (InferenceMode::L0(k), Solver::Closed) => l0_orthogonal_infer(phi, sample, *k),
        (InferenceMode::L0(_), Solver::Iterative) => {
            Err(invalid("no general-dictionary solver for L0; use the closed form"))
        }
    }
}

/// [`infer`] over many samples, in parallel when `exec` allows.
pub fn infer_batch(
    exec: Exec,
    phi: &Dictionary,
    samples: &[Sample],
    mode: &InferenceMode,
    solver: Solver,
) -> Result<Vec<CoeffVector>> {
    map_indices(exec, samples.len(), |i| infer(phi, &samples[i], mode, solver))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn s(x: &[f64]) -> Sample {
        Sample::from_slice(x).unwrap()
    }

    fn free(l: f64) -> RegCoeffs {
        RegCoeffs::shared(l, SignPolicy::Free).unwrap()
    }

    fn nonneg(l: f64) -> RegCoeffs {
        RegCoeffs::shared(l, SignPolicy::NonNegativeOnly).unwrap()
    }

    fn close(a: &DVector<f64>, b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn soft_threshold_cases() {
        assert!((soft_threshold(0.5, 0.3).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(soft_threshold(0.3, 0.3).unwrap(), 0.0);
        assert_eq!(soft_threshold(-0.3, 0.3).unwrap(), 0.0);
        assert!(soft_threshold(1.0, -0.1).is_err());
        assert!(soft_threshold(1.0, f64::NAN).is_err());
    }

    #[test]
    fn soft_threshold_matches_grid_minimizer() {
        // ½(x - a)² + λ|a| on a ∈ [-2, 2], step 1e-6
        let (x, lambda) = (-0.9, 0.3);
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=4_000_000 {
            let a = -2.0 + k as f64 * 1e-6;
            let f = 0.5 * (x - a) * (x - a) + lambda * a.abs();
            if f < best.0 {
                best = (f, a);
            }
        }
        assert!((best.1 - -0.6).abs() < 2e-6);
        assert!((soft_threshold(x, lambda).unwrap() - best.1).abs() < 2e-6);
    }

    #[test]
    fn orth_lasso_identity_cases() {
        let phi = Dictionary::identity(2);
        let a = orth_lasso_infer(&phi, &s(&[0.5, -0.1]), &free(0.3)).unwrap();
        assert!(close(a.values(), &[0.2, 0.0], 1e-15));
        let a = orth_lasso_infer(&phi, &s(&[0.5, -0.1]), &free(0.0)).unwrap();
        assert!(close(a.values(), &[0.5, -0.1], 0.0));
        let skew = Dictionary::unit_norm(DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.0, 0.8])).unwrap();
        assert!(matches!(orth_lasso_infer(&skew, &s(&[1.0, 0.0]), &free(0.1)), Err(Error::NotOrthogonal { .. })));
        assert!(orth_lasso_infer(&phi, &s(&[1.0, 0.0]), &nonneg(0.1)).is_err());
        assert!(orth_lasso_infer(&phi, &s(&[1.0, 0.0, 3.0]), &free(0.1)).is_err());
    }

    #[test]
    fn orth_nonneg_cases() {
        let phi = Dictionary::identity(2);
        let a = orth_nonneg_infer(&phi, &s(&[0.5, -0.5]), &nonneg(0.3)).unwrap();
        assert!(close(a.values(), &[0.2, 0.0], 1e-15));
        let a = orth_nonneg_infer(&phi, &s(&[0.3, 0.3]), &nonneg(0.3)).unwrap();
        assert_eq!(a.values().as_slice(), &[0.0, 0.0]);
        assert!(orth_nonneg_infer(&phi, &s(&[0.3, 0.3]), &free(0.3)).is_err());
    }

    #[test]
    fn per_unit_cases() {
        let phi = Dictionary::identity(2);
        let reg = RegCoeffs::per_unit(v(&[0.1, 0.7]), SignPolicy::NonNegativeOnly).unwrap();
        let a = per_unit_forward(&phi, &s(&[0.5, 0.5]), &reg).unwrap();
        assert!(close(a.values(), &[0.4, 0.0], 1e-15));
        assert!(a.probabilistic());

        let zero = RegCoeffs::per_unit(v(&[0.0, 0.0]), SignPolicy::NonNegativeOnly).unwrap();
        let a = per_unit_forward(&phi, &s(&[-0.5, 0.25]), &zero).unwrap();
        assert_eq!(a.values().as_slice(), &[0.0, 0.25]);

        let neg = RegCoeffs::per_unit(v(&[-0.2, 0.1]), SignPolicy::Free).unwrap();
        let a = per_unit_forward(&phi, &s(&[-0.1, 0.5]), &neg).unwrap();
        assert!(close(a.values(), &[0.1, 0.4], 1e-15));
        assert!(!a.probabilistic());

        let wrong = RegCoeffs::per_unit(v(&[0.1, 0.1, 0.1]), SignPolicy::Free).unwrap();
        assert!(per_unit_forward(&phi, &s(&[0.5, 0.5]), &wrong).is_err());
    }

    #[test]
    fn iterative_trivial_cases() {
        let phi = Dictionary::identity(3);
        let x = s(&[0.5, -0.05, -2.0]);
        let (a, rep) = nonneg_lasso_iterative(&phi, &x, 0.2, 1e-12, 1000).unwrap();
        assert!(rep.converged);
        assert!(close(a.values(), &[0.3, 0.0, 0.0], 1e-12));

        // λ above ‖Φᵀx‖∞ gives zero
        let (a, rep) = lasso_iterative(&phi, &x, 2.5, 1e-12, 1000).unwrap();
        assert!(rep.converged);
        assert_eq!(a.nnz(), 0);

        // n = 1 reduces to scalar soft-threshold
        let col = DMatrix::from_column_slice(2, 1, &[0.6, 0.8]);
        let phi1 = Dictionary::unit_norm(col).unwrap();
        let x = s(&[1.0, 2.0]);
        let (a, _) = lasso_iterative(&phi1, &x, 0.4, 1e-12, 1000).unwrap();
        assert!((a.values()[0] - shrink(0.6 + 1.6, 0.4)).abs() < 1e-10);

        // all projections negative → zero
        let (a, _) = nonneg_lasso_iterative(&phi, &s(&[-1.0, -0.1, -3.0]), 0.1, 1e-12, 1000).unwrap();
        assert_eq!(a.nnz(), 0);

        assert!(lasso_iterative(&phi, &x, 0.1, 1e-10, 10).is_err());
        assert!(lasso_iterative(&phi, &s(&[1.0, 1.0, 1.0]), 0.1, 0.0, 10).is_err());
        assert!(lasso_iterative(&phi, &s(&[1.0, 1.0, 1.0]), -0.1, 1e-9, 10).is_err());
    }

    #[test]
    fn iterative_solves_coupled_problem() {
        // two correlated atoms: check against the analytic active-set solution
        let c = 0.6f64;
        let col2 = [c, (1.0 - c * c).sqrt()];
        let phi = Dictionary::unit_norm(DMatrix::from_row_slice(2, 2, &[1.0, col2[0], 0.0, col2[1]])).unwrap();
        let x = s(&[1.0, 1.0]);
        let lambda = 0.1;
        let (a, rep) = lasso_iterative(&phi, &x, lambda, 1e-12, 10_000).unwrap();
        assert!(rep.converged, "{rep:?}");
        // both active and positive: (ΦᵀΦ) a = Φᵀx - λ 1
        let gram = phi.matrix().tr_mul(phi.matrix());
        let rhs = phi.matrix().tr_mul(x.values()) - DVector::from_element(2, lambda);
        let exact = gram.lu().solve(&rhs).unwrap();
        assert!(exact.iter().all(|v| *v > 0.0));
        assert!((a.values() - exact).amax() < 1e-9);
        assert!(check_subdifferential_optimality(&phi, &x, &free(lambda), &a, 1e-4).unwrap());
    }

    #[test]
    fn non_convergence_is_reported() {
        let c = 0.999f64;
        let phi = Dictionary::unit_norm(DMatrix::from_row_slice(2, 2, &[1.0, c, 0.0, (1.0 - c * c).sqrt()])).unwrap();
        let (a, rep) = lasso_iterative(&phi, &s(&[1.0, -1.0]), 0.01, 1e-14, 3).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 3);
        assert!(a.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ridge_cases() {
        let phi = Dictionary::identity(2);
        let a = ridge_closed_form(&phi, &s(&[0.4, -0.6]), 1.0).unwrap();
        assert!(close(a.values(), &[0.2, -0.3], 1e-15));
        assert!(ridge_closed_form(&phi, &s(&[0.4, -0.6]), 0.0).is_err());
        let a = ridge_orthogonal(&phi, &s(&[2.0, 4.0]), 1.0).unwrap();
        assert!(close(a.values(), &[1.0, 2.0], 0.0));
        let a = ridge_orthogonal(&phi, &s(&[2.0, 4.0]), 0.0).unwrap();
        assert!(close(a.values(), &[2.0, 4.0], 0.0));
        assert!(ridge_orthogonal(&phi, &s(&[2.0, 4.0]), -1.0).is_err());
    }

    #[test]
    fn l0_cases() {
        let phi = Dictionary::identity(3);
        let a = l0_orthogonal_infer(&phi, &s(&[3.0, -2.0, 1.0]), 2).unwrap();
        assert_eq!(a.values().as_slice(), &[3.0, -2.0, 0.0]);
        let a = l0_orthogonal_infer(&phi, &s(&[3.0, -2.0, 1.0]), 0).unwrap();
        assert_eq!(a.nnz(), 0);
        assert!(l0_orthogonal_infer(&phi, &s(&[3.0, -2.0, 1.0]), 4).is_err());
        // ties: lowest index wins
        let a = l0_orthogonal_infer(&phi, &s(&[1.0, -1.0, 1.0]), 2).unwrap();
        assert_eq!(a.values().as_slice(), &[1.0, -1.0, 0.0]);
        // zero projections stay zero
        let a = l0_orthogonal_infer(&phi, &s(&[0.0, 2.0, 0.0]), 3).unwrap();
        assert_eq!(a.nnz(), 1);
        let a = l0_hard_threshold(&phi, &s(&[3.0, -0.5, 1.0]), 0.5).unwrap();
        assert_eq!(a.values().as_slice(), &[3.0, 0.0, 0.0]);
    }

    #[test]
    fn optimality_check_cases() {
        let phi = Dictionary::identity(2);
        let x = s(&[0.8, -0.1]);
        let reg = free(0.3);
        let a = orth_lasso_infer(&phi, &x, &reg).unwrap();
        assert!(check_subdifferential_optimality(&phi, &x, &reg, &a, 1e-4).unwrap());
        let mut moved = a.values().clone();
        moved[0] += 0.1;
        let moved = CoeffVector::new(moved).unwrap();
        assert!(!check_subdifferential_optimality(&phi, &x, &reg, &moved, 1e-4).unwrap());
        // origin optimal for large λ
        let zero = CoeffVector::new(DVector::zeros(2)).unwrap();
        assert!(check_subdifferential_optimality(&phi, &x, &free(0.9), &zero, 1e-4).unwrap());
        // non-negative domain: a coordinate at zero with negative projection is optimal
        let nn = nonneg(0.2);
        let a = orth_nonneg_infer(&phi, &s(&[0.5, -0.4]), &nn).unwrap();
        assert!(check_subdifferential_optimality(&phi, &s(&[0.5, -0.4]), &nn, &a, 1e-4).unwrap());
        assert!(check_subdifferential_optimality(&phi, &x, &reg, &a, 0.0).is_err());
    }

    #[test]
    fn infer_dispatch() {
        let phi = Dictionary::identity(2);
        let x = s(&[0.5, -0.1]);
        let closed = infer(&phi, &x, &InferenceMode::Lasso(0.3), Solver::Closed).unwrap();
        let iter = infer(&phi, &x, &InferenceMode::Lasso(0.3), Solver::Iterative).unwrap();
        assert!((closed.values() - iter.values()).amax() < 1e-9);
        assert!(infer(&phi, &x, &InferenceMode::L0(1), Solver::Iterative).is_err());
        let batch = infer_batch(Exec::default(), &phi, &[x.clone(), x], &InferenceMode::Ridge(1.0), Solver::Closed).unwrap();
        assert_eq!(batch.len(), 2);
    }

    #[test]
    fn power_iteration_estimates_top_eigenvalue() {
        let g = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 1.0]);
        let exact = g.clone().symmetric_eigen().eigenvalues.max();
        assert!((power_iteration(&g, 100) - exact).abs() < 1e-10);
    }
}
