//! Value types shared by every solver: samples, dictionaries, regularization
//! coefficients, coefficient vectors, layer stacks, feature maps and whitening
//! transforms. All of them validate on construction and are immutable after.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Error, Result};

/// Tolerance on `max |ΦᵀΦ - I|` for a dictionary flagged orthogonal.
pub const ORTHO_TOL: f64 = 1e-8;
/// Tolerance on column norms for a non-orthogonal dictionary.
pub const UNIT_NORM_TOL: f64 = 1e-10;

fn all_finite<'a>(it: impl IntoIterator<Item = &'a f64>) -> bool {
    it.into_iter().all(|v| v.is_finite())
}

/// One input vector (image patch or feature vector).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample(DVector<f64>);

impl Sample {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("sample must have at least one entry"));
        }
        if !all_finite(values.iter()) {
            return Err(Error::NonFinite("sample"));
        }
        Ok(Sample(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

/// Basis-function matrix Φ (m input dims × n basis functions). Columns are
/// basis functions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    columns: DMatrix<f64>,
    orthogonalized: bool,
}

/// `max |ΦᵀΦ - I|` over all entries.
pub fn orthogonality_error(phi: &DMatrix<f64>) -> f64 {
    let gram = phi.transpose() * phi;
    let n = gram.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

impl Dictionary {
    fn check_shape(columns: &DMatrix<f64>) -> Result<()> {
        if columns.nrows() == 0 || columns.ncols() == 0 {
            return Err(invalid("dictionary must be at least 1x1"));
        }
        if !all_finite(columns.iter()) {
            return Err(Error::NonFinite("dictionary"));
        }
        Ok(())
    }

    /// Dictionary flagged orthogonal; rejected unless `ΦᵀΦ = I` within [`ORTHO_TOL`].
    pub fn orthogonal(columns: DMatrix<f64>) -> Result<Self> {
        Self::check_shape(&columns)?;
        let max_dev = orthogonality_error(&columns);
        if !(max_dev <= ORTHO_TOL) {
            return Err(Error::NotOrthogonal { max_dev });
        }
        Ok(Dictionary {
            columns,
            orthogonalized: true,
        })
    }

    /// Dictionary with unit-norm columns, not flagged orthogonal.
    pub fn unit_norm(columns: DMatrix<f64>) -> Result<Self> {
        Self::check_shape(&columns)?;
        for (j, col) in columns.column_iter().enumerate() {
            let norm = col.norm();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::NotUnitNorm { column: j, norm });
            }
        }
        Ok(Dictionary {
            columns,
            orthogonalized: false,
        })
    }

    /// Flags the matrix orthogonal when it passes the orthogonality check,
    /// otherwise requires unit-norm columns.
    pub fn from_matrix(columns: DMatrix<f64>) -> Result<Self> {
        Self::check_shape(&columns)?;
        if columns.ncols() <= columns.nrows() && orthogonality_error(&columns) <= ORTHO_TOL {
            return Ok(Dictionary {
                columns,
                orthogonalized: true,
            });
        }
        Self::unit_norm(columns)
    }

    pub fn identity(n: usize) -> Self {
        Dictionary {
            columns: DMatrix::identity(n, n),
            orthogonalized: true,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.columns
    }

    /// m, the input dimension.
    pub fn input_dim(&self) -> usize {
        self.columns.nrows()
    }

    /// n, the number of basis functions.
    pub fn n_atoms(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_orthogonalized(&self) -> bool {
        self.orthogonalized
    }

    pub fn require_orthogonal(&self) -> Result<()> {
        if self.orthogonalized {
            Ok(())
        } else {
            Err(Error::NotOrthogonal {
                max_dev: orthogonality_error(&self.columns),
            })
        }
    }

    /// Φᵀx.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("sample length", self.input_dim(), x.len())?;
        Ok(self.columns.tr_mul(x))
    }

    pub fn orthogonality_error(&self) -> f64 {
        orthogonality_error(&self.columns)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignPolicy {
    Free,
    NonNegativeOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lambda {
    Shared(f64),
    PerUnit(DVector<f64>),
}

/// Regularization coefficients λ = σ²/μ, shared or one per basis function.
#[derive(Debug, Clone, PartialEq)]
pub struct RegCoeffs {
    lambda: Lambda,
    sign_policy: SignPolicy,
}

impl RegCoeffs {
    /// A shared scalar λ. With `NonNegativeOnly` λ must be strictly positive;
    /// with `Free` λ = 0 is allowed (plain least squares).
    pub fn shared(lambda: f64, sign_policy: SignPolicy) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::NonFinite("lambda"));
        }
        match sign_policy {
            SignPolicy::Free if lambda < 0.0 => {
                return Err(invalid(format!("shared lambda must be >= 0, got {lambda}")))
            }
            SignPolicy::NonNegativeOnly if lambda <= 0.0 => {
                return Err(invalid(format!(
                    "non-negative sparse coding needs lambda > 0, got {lambda}"
                )))
            }
            _ => {}
        }
        Ok(RegCoeffs {
            lambda: Lambda::Shared(lambda),
            sign_policy,
        })
    }

    /// One λ_i per unit. `NonNegativeOnly` rejects negative entries; `Free`
    /// admits them (plain ReLU-network bias regime).
    pub fn per_unit(lambdas: DVector<f64>, sign_policy: SignPolicy) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(invalid("per-unit lambda vector must be non-empty"));
        }
        if !all_finite(lambdas.iter()) {
            return Err(Error::NonFinite("lambda"));
        }
        if sign_policy == SignPolicy::NonNegativeOnly {
            if let Some((i, v)) = lambdas.iter().enumerate().find(|(_, v)| **v < 0.0) {
                return Err(invalid(format!(
                    "lambda[{i}] = {v} is negative under NonNegativeOnly"
                )));
            }
        }
        Ok(RegCoeffs {
            lambda: Lambda::PerUnit(lambdas),
            sign_policy,
        })
    }

    pub fn lambda(&self) -> &Lambda {
        &self.lambda
    }

    pub fn sign_policy(&self) -> SignPolicy {
        self.sign_policy
    }

    pub fn is_shared(&self) -> bool {
        matches!(self.lambda, Lambda::Shared(_))
    }

    pub fn shared_value(&self) -> Option<f64> {
        match self.lambda {
            Lambda::Shared(v) => Some(v),
            Lambda::PerUnit(_) => None,
        }
    }

    /// λ broadcast to length `n`; per-unit vectors must already have length `n`.
    pub fn to_vector(&self, n: usize) -> Result<DVector<f64>> {
        match &self.lambda {
            Lambda::Shared(v) => Ok(DVector::from_element(n, *v)),
            Lambda::PerUnit(l) => {
                check_dim("lambda vector length", n, l.len())?;
                Ok(l.clone())
            }
        }
    }

    /// True when any λ_i is negative (outside the probabilistic interpretation).
    pub fn has_negative(&self) -> bool {
        match &self.lambda {
            Lambda::Shared(v) => *v < 0.0,
            Lambda::PerUnit(l) => l.iter().any(|v| *v < 0.0),
        }
    }

    /// The inference transform this coefficient set selects: soft-threshold
    /// for a shared λ with free sign, one-sided clamp otherwise.
    pub fn is_nonnegative_model(&self) -> bool {
        !(self.is_shared() && self.sign_policy == SignPolicy::Free)
    }
}

/// Sparse coefficients produced by inference.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffVector {
    values: DVector<f64>,
    probabilistic: bool,
}

impl CoeffVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if !all_finite(values.iter()) {
            return Err(Error::NonFinite("coefficients"));
        }
        Ok(CoeffVector {
            values,
            probabilistic: true,
        })
    }

    pub(crate) fn with_flag(values: DVector<f64>, probabilistic: bool) -> Result<Self> {
        let mut c = Self::new(values)?;
        c.probabilistic = probabilistic;
        Ok(c)
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    pub fn support(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// False when the coefficients came from a negative-λ configuration, where
    /// the exponential-prior reading no longer holds.
    pub fn probabilistic(&self) -> bool {
        self.probabilistic
    }
}

/// One sparse coding layer: dictionary plus its regularization.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub dictionary: Dictionary,
    pub reg: RegCoeffs,
}

/// Stacked sparse coding layers with a multinomial logistic head.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layers: Vec<Layer>,
    head_weights: DMatrix<f64>,
    head_bias: DVector<f64>,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>, head_weights: DMatrix<f64>, head_bias: DVector<f64>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("layer stack needs at least one layer"));
        }
        for (k, layer) in layers.iter().enumerate() {
            layer.reg.to_vector(layer.dictionary.n_atoms())?;
            if k + 1 < layers.len() {
                check_dim(
                    "layer chain (next input dim)",
                    layer.dictionary.n_atoms(),
                    layers[k + 1].dictionary.input_dim(),
                )?;
            }
        }
        let last = layers.last().map(|l| l.dictionary.n_atoms()).unwrap_or(0);
        check_dim("head input dim", last, head_weights.ncols())?;
        check_dim("head bias length", head_weights.nrows(), head_bias.len())?;
        if head_weights.nrows() == 0 {
            return Err(invalid("head needs at least one class"));
        }
        if !all_finite(head_weights.iter()) || !all_finite(head_bias.iter()) {
            return Err(Error::NonFinite("head"));
        }
        Ok(LayerStack {
            layers,
            head_weights,
            head_bias,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn head_weights(&self) -> &DMatrix<f64> {
        &self.head_weights
    }

    pub fn head_bias(&self) -> &DVector<f64> {
        &self.head_bias
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].dictionary.input_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.head_bias.len()
    }

    pub fn into_parts(self) -> (Vec<Layer>, DMatrix<f64>, DVector<f64>) {
        (self.layers, self.head_weights, self.head_bias)
    }
}

/// N×N spatial grid of B-channel coefficient vectors, stored row-major as
/// `(i, j, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    side: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(side: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if side == 0 || channels == 0 {
            return Err(invalid("feature map needs N >= 1 and B >= 1"));
        }
        let expected = side
            .checked_mul(side)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::DimensionOverflow("feature map size".into()))?;
        check_dim("feature map data length", expected, data.len())?;
        if !all_finite(data.iter()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(FeatureMap {
            side,
            channels,
            data,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// The B-vector at grid position (i, j).
    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.side + j) * self.channels;
        &self.data[start..start + self.channels]
    }
}

/// ZCA whitening: `x ↦ W (x - mean)` with symmetric W.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    mean: DVector<f64>,
    matrix: DMatrix<f64>,
}

impl WhiteningTransform {
    pub const SYMMETRY_TOL: f64 = 1e-8;

    pub fn new(mean: DVector<f64>, matrix: DMatrix<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(invalid("whitening transform needs m >= 1"));
        }
        check_dim("whitening matrix rows", mean.len(), matrix.nrows())?;
        check_dim("whitening matrix cols", mean.len(), matrix.ncols())?;
        if !all_finite(mean.iter()) || !all_finite(matrix.iter()) {
            return Err(Error::NonFinite("whitening transform"));
        }
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > Self::SYMMETRY_TOL {
            return Err(invalid(format!("whitening matrix not symmetric (max asymmetry {asym:e})")));
        }
        Ok(WhiteningTransform { mean, matrix })
    }

    pub fn identity(m: usize) -> Self {
        WhiteningTransform {
            mean: DVector::zeros(m),
            matrix: DMatrix::identity(m, m),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dictionary_rejects_nan_and_bad_flags() {
        let mut m = DMatrix::identity(3, 2);
        m[(0, 0)] = f64::NAN;
        assert!(matches!(Dictionary::orthogonal(m.clone()), Err(Error::NonFinite(_))));
        assert!(Dictionary::unit_norm(m).is_err());

        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.0, 0.8]);
        assert!(matches!(Dictionary::orthogonal(skew.clone()), Err(Error::NotOrthogonal { .. })));
        let d = Dictionary::unit_norm(skew.clone()).unwrap();
        assert!(!d.is_orthogonalized());
        assert!(!Dictionary::from_matrix(skew).unwrap().is_orthogonalized());

        let scaled = DMatrix::from_row_slice(2, 1, &[3.0, 4.0]);
        assert!(matches!(Dictionary::unit_norm(scaled), Err(Error::NotUnitNorm { .. })));
        assert!(Dictionary::from_matrix(DMatrix::zeros(0, 3)).is_err());
        assert!(Dictionary::from_matrix(DMatrix::identity(2, 2)).unwrap().is_orthogonalized());
    }

    #[test]
    fn project_checks_length() {
        let d = Dictionary::identity(2);
        assert!(d.project(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn reg_sign_rules() {
        assert!(RegCoeffs::shared(0.0, SignPolicy::Free).is_ok());
        assert!(RegCoeffs::shared(-0.1, SignPolicy::Free).is_err());
        assert!(RegCoeffs::shared(0.0, SignPolicy::NonNegativeOnly).is_err());
        assert!(RegCoeffs::shared(f64::NAN, SignPolicy::Free).is_err());
        let neg = DVector::from_vec(vec![0.1, -0.2]);
        assert!(RegCoeffs::per_unit(neg.clone(), SignPolicy::NonNegativeOnly).is_err());
        let free = RegCoeffs::per_unit(neg, SignPolicy::Free).unwrap();
        assert!(free.has_negative());
        assert!(free.to_vector(3).is_err());
        assert!(free.is_nonnegative_model());
        assert!(!RegCoeffs::shared(0.1, SignPolicy::Free).unwrap().is_nonnegative_model());
    }

    #[test]
    fn stack_chain_is_checked() {
        let layer = |m: usize, n: usize| Layer {
            dictionary: Dictionary::unit_norm(DMatrix::from_fn(m, n, |i, j| if i == j % m { 1.0 } else { 0.0 })).unwrap(),
            reg: RegCoeffs::per_unit(DVector::zeros(n), SignPolicy::Free).unwrap(),
        };
        assert!(LayerStack::new(vec![layer(4, 3), layer(3, 2)], DMatrix::zeros(2, 2), DVector::zeros(2)).is_ok());
        assert!(LayerStack::new(vec![layer(4, 3), layer(2, 2)], DMatrix::zeros(2, 2), DVector::zeros(2)).is_err());
        assert!(LayerStack::new(vec![layer(4, 3)], DMatrix::zeros(2, 2), DVector::zeros(2)).is_err());
        assert!(LayerStack::new(vec![layer(4, 3)], DMatrix::zeros(2, 3), DVector::zeros(3)).is_err());
    }

    #[test]
    fn feature_map_indexing() {
        let fm = FeatureMap::new(2, 3, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(fm.at(1, 0), &[6.0, 7.0, 8.0]);
        assert!(FeatureMap::new(2, 3, vec![0.0; 11]).is_err());
        assert!(FeatureMap::new(0, 3, vec![]).is_err());
    }

    #[test]
    fn whitening_requires_symmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(WhiteningTransform::new(DVector::zeros(2), m).is_err());
        assert!(WhiteningTransform::new(DVector::zeros(2), DMatrix::identity(2, 2)).is_ok());
    }
}
