//! Instantaneous correlation models for the Brownian drivers and their
//! Cholesky factors.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Smallest admissible squared Cholesky pivot.
pub const PD_EPSILON: f64 = 1e-10;
const STRUCTURE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrelationError {
    #[error("matrix data has {len} entries, not a square of dimension {dim}")]
    NotSquare { dim: usize, len: usize },
    #[error("matrix is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },
    #[error("diagonal entry {i} is not 1")]
    NotUnitDiagonal { i: usize },
    #[error("entry ({i}, {j}) = {value} lies outside [-1, 1]")]
    OutOfRange { i: usize, j: usize, value: f64 },
    #[error("not positive definite: pivot {pivot} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("custom correlation model produced an invalid matrix: {0}")]
    SingularMatrix(Box<CorrelationError>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid correlation parameter: {0}")]
    InvalidParameter(String),
}

/// Symmetric, unit-diagonal matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl CorrMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self { dim, data }
    }

    /// All off-diagonal entries equal to `rho`.
    pub fn equicorrelated(dim: usize, rho: f64) -> Self {
        let mut m = Self::identity(dim);
        for i in 0..dim {
            for j in 0..dim {
                if i != j {
                    m.data[i * dim + j] = rho;
                }
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CorrelationError> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(CorrelationError::NotSquare { dim, len: row.len() * dim });
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(dim, data)
    }

    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self, CorrelationError> {
        if data.len() != dim * dim {
            return Err(CorrelationError::NotSquare { dim, len: data.len() });
        }
        validate_structure(dim, &data)?;
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

fn validate_structure(dim: usize, data: &[f64]) -> Result<(), CorrelationError> {
    for i in 0..dim {
        if (data[i * dim + i] - 1.0).abs() > STRUCTURE_TOL {
            return Err(CorrelationError::NotUnitDiagonal { i });
        }
        for j in 0..dim {
            let v = data[i * dim + j];
            if !(-1.0..=1.0).contains(&v) {
                return Err(CorrelationError::OutOfRange { i, j, value: v });
            }
            if (v - data[j * dim + i]).abs() > STRUCTURE_TOL {
                return Err(CorrelationError::NotSymmetric { i, j });
            }
        }
    }
    Ok(())
}

/// Lower-triangular `L` with `L Lᵀ = Σ`, row-major.
///
/// With unit variances the first column is `L^{i,1} = ρ^{i,1}` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    dim: usize,
    lower: Vec<f64>,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.lower
    }

    /// `L Lᵀ`, row-major.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..=i.min(j)).map(|k| self.get(i, k) * self.get(j, k)).sum();
            }
        }
        out
    }
}

/// Factors `sigma`, rejecting any pivot `≤ PD_EPSILON`.
pub fn cholesky(sigma: &CorrMatrix) -> Result<CholeskyFactor, CorrelationError> {
    let mut lower = vec![0.0; sigma.dim * sigma.dim];
    cholesky_into(sigma.dim, &sigma.data, &mut lower)?;
    Ok(CholeskyFactor { dim: sigma.dim, lower })
}

/// In-place variant of [`cholesky`] writing into a `dim × dim` buffer.
pub fn cholesky_into(dim: usize, sigma: &[f64], out: &mut [f64]) -> Result<(), CorrelationError> {
    debug_assert_eq!(sigma.len(), dim * dim);
    debug_assert_eq!(out.len(), dim * dim);
    out.fill(0.0);
    for j in 0..dim {
        let mut pivot = sigma[j * dim + j];
        for k in 0..j {
            pivot -= out[j * dim + k] * out[j * dim + k];
        }
        if pivot.is_nan() || pivot <= PD_EPSILON {
            return Err(CorrelationError::NotPositiveDefinite { index: j, pivot });
        }
        let d = pivot.sqrt();
        out[j * dim + j] = d;
        for i in (j + 1)..dim {
            let mut s = sigma[i * dim + j];
            for k in 0..j {
                s -= out[i * dim + k] * out[j * dim + k];
            }
            out[i * dim + j] = s / d;
        }
    }
    Ok(())
}

/// Max-norm residual of `L̃ L̃ᵀ + Σ̃¹ − Σ¹`, where `L̃` and `Σ¹` drop the first
/// row and column of `L` and `Σ`, and `Σ̃¹ = (ρ^{1,i} ρ^{1,j})_{i,j ≥ 2}`.
pub fn check_block_identity(sigma: &CorrMatrix) -> Result<f64, CorrelationError> {
    let l = cholesky(sigma)?;
    let n = sigma.dim;
    let mut residual: f64 = 0.0;
    for i in 1..n {
        for j in 1..n {
            let ltl: f64 = (1..=i.min(j)).map(|k| l.get(i, k) * l.get(j, k)).sum();
            let outer = sigma.get(0, i) * sigma.get(0, j);
            residual = residual.max((ltl + outer - sigma.get(i, j)).abs());
        }
    }
    Ok(residual)
}

pub type CorrelationFn = dyn Fn(f64, &[f64]) -> CorrMatrix + Send + Sync;

/// Rule producing `Σ_t` from the time and the current observation vector.
#[derive(Clone)]
pub enum CorrelationModel {
    Constant(CorrMatrix),
    /// `ρ_t^{i,j} = ρ e^{−t}` off the diagonal.
    ExponentialDecay { dim: usize, rho: f64 },
    /// `ρ_t^{i,j} = ξ_i ξ_j / (1 + |ξ_i ξ_j|) · e^{−t}` off the diagonal.
    StateDependent { dim: usize },
    Custom { dim: usize, label: String, evaluator: Arc<CorrelationFn> },
}

impl fmt::Debug for CorrelationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorrelationModel::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            CorrelationModel::ExponentialDecay { dim, rho } => f
                .debug_struct("ExponentialDecay")
                .field("dim", dim)
                .field("rho", rho)
                .finish(),
            CorrelationModel::StateDependent { dim } => {
                f.debug_struct("StateDependent").field("dim", dim).finish()
            }
            CorrelationModel::Custom { dim, label, .. } => {
                f.debug_struct("Custom").field("dim", dim).field("label", label).finish()
            }
        }
    }
}

impl CorrelationModel {
    pub fn independent(dim: usize) -> Self {
        CorrelationModel::Constant(CorrMatrix::identity(dim))
    }

    /// Validates positive definiteness once up front.
    pub fn constant(matrix: CorrMatrix) -> Result<Self, CorrelationError> {
        cholesky(&matrix)?;
        Ok(CorrelationModel::Constant(matrix))
    }

    pub fn constant_rho(dim: usize, rho: f64) -> Result<Self, CorrelationError> {
        Self::constant(CorrMatrix::equicorrelated(dim, rho))
    }

    /// Equicorrelation decaying from `rho`; needs `rho > −1/(N−1)` for `t = 0`.
    pub fn exponential_decay(dim: usize, rho: f64) -> Result<Self, CorrelationError> {
        if !(rho > -1.0 && rho < 1.0) {
            return Err(CorrelationError::InvalidParameter(format!("rho must lie in (-1, 1), got {rho}")));
        }
        cholesky(&CorrMatrix::equicorrelated(dim, rho))?;
        Ok(CorrelationModel::ExponentialDecay { dim, rho })
    }

    pub fn state_dependent(dim: usize) -> Self {
        CorrelationModel::StateDependent { dim }
    }

    pub fn custom<F>(dim: usize, label: impl Into<String>, evaluator: F) -> Self
    where
        F: Fn(f64, &[f64]) -> CorrMatrix + Send + Sync + 'static,
    {
        CorrelationModel::Custom { dim, label: label.into(), evaluator: Arc::new(evaluator) }
    }

    pub fn dim(&self) -> usize {
        match self {
            CorrelationModel::Constant(m) => m.dim,
            CorrelationModel::ExponentialDecay { dim, .. }
            | CorrelationModel::StateDependent { dim }
            | CorrelationModel::Custom { dim, .. } => *dim,
        }
    }

    /// True when `Σ_t` never changes, so one factorization serves every step.
    pub fn is_time_invariant(&self) -> bool {
        match self {
            CorrelationModel::Constant(_) => true,
            CorrelationModel::ExponentialDecay { rho, .. } => *rho == 0.0,
            CorrelationModel::StateDependent { dim } => *dim <= 1,
            CorrelationModel::Custom { .. } => false,
        }
    }

    pub fn label(&self) -> String {
        match self {
            CorrelationModel::Constant(m) => {
                let off: Vec<f64> = (0..m.dim)
                    .flat_map(|i| ((i + 1)..m.dim).map(move |j| (i, j)))
                    .map(|(i, j)| m.get(i, j))
                    .collect();
                if off.iter().all(|&v| v == 0.0) {
                    "independent".to_string()
                } else if off.iter().all(|&v| v == off[0]) {
                    format!("constant(rho={})", off[0])
                } else {
                    "constant(matrix)".to_string()
                }
            }
            CorrelationModel::ExponentialDecay { rho, .. } => format!("exp_decay(rho={rho})"),
            CorrelationModel::StateDependent { .. } => "state_dependent".to_string(),
            CorrelationModel::Custom { label, .. } => format!("custom({label})"),
        }
    }

    pub fn evaluate(&self, t: f64, obs: &[f64]) -> Result<CorrMatrix, CorrelationError> {
        let dim = self.dim();
        let mut data = vec![0.0; dim * dim];
        self.evaluate_into(t, obs, &mut data)?;
        Ok(CorrMatrix { dim, data })
    }

    /// Writes `Σ_t` into a row-major `N × N` buffer.
    pub fn evaluate_into(&self, t: f64, obs: &[f64], out: &mut [f64]) -> Result<(), CorrelationError> {
        let dim = self.dim();
        if obs.len() != dim {
            return Err(CorrelationError::DimensionMismatch { expected: dim, got: obs.len() });
        }
        match self {
            CorrelationModel::Constant(m) => out.copy_from_slice(&m.data),
            CorrelationModel::ExponentialDecay { rho, .. } => {
                let off = rho * (-t).exp();
                fill_off_diagonal(dim, out, |_, _| off);
            }
            CorrelationModel::StateDependent { .. } => {
                let decay = (-t).exp();
                fill_off_diagonal(dim, out, |i, j| {
                    let p = obs[i] * obs[j];
                    p / (1.0 + p.abs()) * decay
                });
            }
            CorrelationModel::Custom { evaluator, .. } => {
                let m = evaluator(t, obs);
                if m.dim != dim {
                    return Err(CorrelationError::SingularMatrix(Box::new(
                        CorrelationError::DimensionMismatch { expected: dim, got: m.dim },
                    )));
                }
                let wrap = |e| CorrelationError::SingularMatrix(Box::new(e));
                validate_structure(dim, &m.data).map_err(wrap)?;
                cholesky(&m).map_err(wrap)?;
                out.copy_from_slice(&m.data);
            }
        }
        Ok(())
    }
}

fn fill_off_diagonal(dim: usize, out: &mut [f64], entry: impl Fn(usize, usize) -> f64) {
    for i in 0..dim {
        out[i * dim + i] = 1.0;
        for j in (i + 1)..dim {
            let v = entry(i, j);
            out[i * dim + j] = v;
            out[j * dim + i] = v;
        }
    }
}
