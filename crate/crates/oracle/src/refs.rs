//! Reference implementations written as plain loops over slices, sharing no
//! code paths with the library under test beyond nalgebra factorizations.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * gaussian(rng)).collect()
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| gaussian(rng))
}

/// Random m×n matrix with orthonormal columns: thin Q of a Gaussian matrix
/// with the signs fixed so that R has a positive diagonal.
pub fn random_orthonormal(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    assert!(n <= m);
    let qr = gaussian_matrix(rng, m, n).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random m×n matrix with unit-norm columns.
pub fn random_unit_columns(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    let mut a = gaussian_matrix(rng, m, n);
    for mut c in a.column_iter_mut() {
        let norm = c.norm();
        c /= norm;
    }
    a
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Column j of Φ as a Vec.
pub fn column(phi: &DMatrix<f64>, j: usize) -> Vec<f64> {
    (0..phi.nrows()).map(|i| phi[(i, j)]).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Φᵀx by loops.
pub fn project(phi: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..phi.ncols()).map(|j| dot(&column(phi, j), x)).collect()
}

/// Φa by loops.
pub fn synthesize(phi: &DMatrix<f64>, a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; phi.nrows()];
    for (j, aj) in a.iter().enumerate() {
        for (i, o) in out.iter_mut().enumerate() {
            *o += phi[(i, j)] * aj;
        }
    }
    out
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// argmin over a of `½(a - p)² + λ|a|`, by enumerating the three candidate
/// stationary points (a = 0, a = p - λ > 0, a = p + λ < 0).
pub fn scalar_lasso_min(p: f64, lambda: f64) -> f64 {
    let f = |a: f64| 0.5 * (a - p).powi(2) + lambda * a.abs();
    let mut best = 0.0;
    let positive = p - lambda;
    let negative = p + lambda;
    if positive > 0.0 && f(positive) < f(best) {
        best = positive;
    }
    if negative < 0.0 && f(negative) < f(best) {
        best = negative;
    }
    best
}

/// `max(0, W x + b)` with W given row by row.
pub fn dense_relu(w_rows: &[Vec<f64>], bias: &[f64], x: &[f64]) -> Vec<f64> {
    w_rows
        .iter()
        .zip(bias)
        .map(|(row, b)| (dot(row, x) + b).max(0.0))
        .collect()
}

/// Rows of Φᵀ, i.e. the columns of Φ.
pub fn transpose_rows(phi: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..phi.ncols()).map(|j| column(phi, j)).collect()
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// One dense-ReLU layer: weights W (rows) and bias b.
pub struct DenseLayer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Dense-ReLU stack followed by an affine softmax head. Returns the hidden
/// activations and the class probabilities.
pub fn reference_network(
    layers: &[DenseLayer],
    head_w: &[Vec<f64>],
    head_b: &[f64],
    x: &[f64],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut acts = Vec::new();
    let mut h = x.to_vec();
    for l in layers {
        h = dense_relu(&l.w, &l.b, &h);
        acts.push(h.clone());
    }
    let logits: Vec<f64> = head_w.iter().zip(head_b).map(|(row, b)| dot(row, &h) + b).collect();
    (acts, softmax(&logits))
}

/// Mean of `-log y_label` with y floored at 1e-300.
pub fn reference_cross_entropy(
    layers: &[DenseLayer],
    head_w: &[Vec<f64>],
    head_b: &[f64],
    batch: &[(Vec<f64>, usize)],
) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|(x, label)| -reference_network(layers, head_w, head_b, x).1[*label].max(1e-300).ln())
        .sum();
    total / batch.len() as f64
}

/// Entry (i, j, c) of an N×N×B map stored row-major.
fn map_entry(map: &[f64], n: usize, b: usize, i: usize, j: usize, c: usize) -> f64 {
    map[i * n * b + j * b + c]
}

/// All valid windows by enumerating flat window offsets t and decoding them
/// as (u, v, c) with t = (u·M + v)·B + c.
pub fn brute_force_windows(map: &[f64], n: usize, b: usize, m: usize, stride: usize) -> (usize, Vec<Vec<f64>>) {
    let mut starts = Vec::new();
    let mut s = 0;
    while s + m <= n {
        starts.push(s);
        s += stride;
    }
    let g = starts.len();
    let mut out = Vec::new();
    for &i0 in &starts {
        for &j0 in &starts {
            let mut w = vec![0.0; m * m * b];
            for (t, slot) in w.iter_mut().enumerate() {
                let c = t % b;
                let v = (t / b) % m;
                let u = t / (b * m);
                *slot = map_entry(map, n, b, i0 + u, j0 + v, c);
            }
            out.push(w);
        }
    }
    (g, out)
}

/// Valid-mode cross-correlation with ReLU:
/// `out[i, j, k] = max(0, Σ_{u,v,c} K_k[u, v, c] · map[i·s + u, j·s + v, c] + bias_k)`
/// where kernel k is stored flat as `[(u·M + v)·B + c]`.
pub fn relu_cross_correlation(
    map: &[f64],
    n: usize,
    b: usize,
    kernels: &[Vec<f64>],
    bias: &[f64],
    m: usize,
    stride: usize,
) -> (usize, Vec<f64>) {
    let g = (n - m) / stride + 1;
    let kcount = kernels.len();
    let mut out = vec![0.0; g * g * kcount];
    for i in 0..g {
        for j in 0..g {
            for k in 0..kcount {
                let mut acc = bias[k];
                for u in 0..m {
                    for v in 0..m {
                        for c in 0..b {
                            acc += kernels[k][(u * m + v) * b + c] * map_entry(map, n, b, i * stride + u, j * stride + v, c);
                        }
                    }
                }
                out[(i * g + j) * kcount + k] = acc.max(0.0);
            }
        }
    }
    (g, out)
}

/// Minimizes `½‖x - Φa‖² + ½λ‖a‖²` by plain gradient descent.
pub fn ridge_by_descent(phi: &DMatrix<f64>, x: &[f64], lambda: f64) -> Vec<f64> {
    let n = phi.ncols();
    let frob: f64 = phi.iter().map(|v| v * v).sum();
    let step = 1.0 / (frob + lambda);
    let mut a = vec![0.0; n];
    for _ in 0..2_000_000 {
        let r: Vec<f64> = synthesize(phi, &a).iter().zip(x).map(|(p, xi)| p - xi).collect();
        let g: Vec<f64> = project(phi, &r).iter().zip(&a).map(|(gi, ai)| gi + lambda * ai).collect();
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax < 1e-13 {
            break;
        }
        for (ai, gi) in a.iter_mut().zip(&g) {
            *ai -= step * gi;
        }
    }
    a
}

/// Solves the square system `A z = y` by Gaussian elimination with partial
/// pivoting. Returns None if singular.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut y: Vec<f64>) -> Option<Vec<f64>> {
    let n = y.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        y.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            y[row] -= f * y[col];
        }
    }
    let mut z = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * z[k]).sum();
        z[row] = (y[row] - s) / a[row][row];
    }
    Some(z)
}

/// Least-squares residual `min_c ‖x - Φ_S c‖²` for the columns in `support`.
pub fn least_squares_residual(phi: &DMatrix<f64>, x: &[f64], support: &[usize]) -> f64 {
    if support.is_empty() {
        return dot(x, x);
    }
    let cols: Vec<Vec<f64>> = support.iter().map(|&j| column(phi, j)).collect();
    let gram: Vec<Vec<f64>> = cols.iter().map(|ci| cols.iter().map(|cj| dot(ci, cj)).collect()).collect();
    let rhs: Vec<f64> = cols.iter().map(|c| dot(c, x)).collect();
    let coef = solve_linear(gram, rhs).expect("support columns are independent");
    let mut fit = vec![0.0; x.len()];
    for (c, w) in cols.iter().zip(&coef) {
        for (f, ci) in fit.iter_mut().zip(c) {
            *f += w * ci;
        }
    }
    sq_dist(x, &fit)
}

/// Best reconstruction error over every support of size ≤ k.
pub fn l0_exhaustive(phi: &DMatrix<f64>, x: &[f64], k: usize) -> f64 {
    let n = phi.ncols();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize > k {
            continue;
        }
        let support: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        best = best.min(least_squares_residual(phi, x, &support));
    }
    best
}

/// `Φ (ΦᵀΦ)^(-1/2)` through the symmetric eigendecomposition of the Gram
/// matrix.
pub fn inverse_sqrt_orthogonalize(phi: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = (phi.transpose() * phi).symmetric_eigen();
    let n = phi.ncols();
    let mut inv_sqrt = DMatrix::zeros(n, n);
    for k in 0..n {
        let s = 1.0 / eig.eigenvalues[k].sqrt();
        let e = eig.eigenvectors.column(k);
        for i in 0..n {
            for j in 0..n {
                inv_sqrt[(i, j)] += s * e[i] * e[j];
            }
        }
    }
    phi * inv_sqrt
}

/// Central differences of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖g - r‖ / max(‖r‖, floor)`.
pub fn relative_error(g: &[f64], r: &[f64], floor: f64) -> f64 {
    sq_dist(g, r).sqrt() / dot(r, r).sqrt().max(floor)
}

/// Mean over the batch of `½‖x - Φs‖² + penalty(s)` with `s` the closed-form
/// transform: soft threshold at λ (`l1 = true`, penalty λ‖s‖₁) or one-sided
/// clamp `max(0, p - λ_j)` (penalty Σ λ_j s_j).
pub fn dictionary_loss(phi: &DMatrix<f64>, batch: &[Vec<f64>], lambdas: &[f64], l1: bool) -> f64 {
    let mut total = 0.0;
    for x in batch {
        let p = project(phi, x);
        let s: Vec<f64> = p
            .iter()
            .zip(lambdas)
            .map(|(pj, l)| if l1 { pj.signum() * (pj.abs() - l).max(0.0) } else { (pj - l).max(0.0) })
            .collect();
        let penalty: f64 = s.iter().zip(lambdas).map(|(sj, l)| if l1 { l * sj.abs() } else { l * sj }).sum();
        total += 0.5 * sq_dist(x, &synthesize(phi, &s)) + penalty;
    }
    total / batch.len() as f64
}

/// `½‖x - a Φ₁a₁ - b Φ₁Φ₂a₂‖²` evaluated term by term.
pub fn combined_recon(phi1: &DMatrix<f64>, phi2: &DMatrix<f64>, a1: &[f64], a2: &[f64], x: &[f64], a: f64, b: f64) -> f64 {
    let layer1 = synthesize(phi1, a1);
    let layer2 = synthesize(phi1, &synthesize(phi2, a2));
    let mut total = 0.0;
    for i in 0..x.len() {
        let e = x[i] - a * layer1[i] - b * layer2[i];
        total += e * e;
    }
    0.5 * total
}
