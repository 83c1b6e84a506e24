//! Dense linear-algebra substrate: Gram matrices, cached symmetric
//! factorizations, leverage scores, isotropization, and spectral
//! approximation certificates.
//!
//! Everything here is a pure function of its inputs. Matrices are kept
//! exactly symmetric by accumulating one triangle and mirroring, so the
//! symmetric eigensolver never sees asymmetry noise. Rank decisions use a
//! single pseudo-inverse cutoff convention: eigenvalues below
//! `dim * ||M|| * 1e-12` are treated as zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative eigenvalue cutoff for numerical rank and pseudo-inverse solves.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-12;

/// Row count above which leverage scores fan out across worker threads.
const PARALLEL_LEVERAGE_THRESHOLD: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite entry at position {index}")]
    NonFiniteEntry { index: usize },
    #[error("weight must be finite and nonnegative, got {weight}")]
    InvalidWeight { weight: f64 },
    #[error("input is rank deficient: numerical rank {rank} < dimension {dim}")]
    RankDeficient { rank: usize, dim: usize },
    #[error("reference matrix is numerically indefinite (min eigenvalue {min_eigenvalue:e})")]
    ReferenceIndefinite { min_eigenvalue: f64 },
    #[error("empty row set")]
    EmptyInput,
    #[error("dimension must be positive")]
    ZeroDimension,
}

/// A row vector in `R^d` with all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct RowVector {
    entries: Vec<f64>,
}

impl RowVector {
    pub fn new(entries: Vec<f64>) -> Result<Self, LinalgError> {
        if let Some(index) = entries.iter().position(|x| !x.is_finite()) {
            return Err(LinalgError::NonFiniteEntry { index });
        }
        Ok(Self { entries })
    }

    pub fn from_slice(entries: &[f64]) -> Result<Self, LinalgError> {
        Self::new(entries.to_vec())
    }

    /// Standard basis vector `e_i` scaled by `scale`.
    pub fn basis(dim: usize, i: usize, scale: f64) -> Self {
        let mut entries = vec![0.0; dim];
        entries[i] = scale;
        Self { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn norm_squared(&self) -> f64 {
        self.entries.iter().map(|x| x * x).sum()
    }

    pub fn scaled(&self, s: f64) -> RowVector {
        RowVector {
            entries: self.entries.iter().map(|x| x * s).collect(),
        }
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.entries.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.entries)
    }
}

impl std::ops::Index<usize> for RowVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.entries[i]
    }
}

/// A row whose outer product enters the Gram sum with a scalar weight,
/// plus the leverage estimate cached by the resampling loop.
///
/// Weight-zero rows are considered deleted and never appear in buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedRow {
    pub(crate) row: RowVector,
    pub(crate) weight: f64,
    pub(crate) leverage_estimate: Option<f64>,
    pub(crate) origin_id: usize,
}

impl WeightedRow {
    pub fn new(row: RowVector, weight: f64, origin_id: usize) -> Result<Self, LinalgError> {
        if !weight.is_finite() || weight < 0.0 {
            return Err(LinalgError::InvalidWeight { weight });
        }
        Ok(Self {
            row,
            weight,
            leverage_estimate: None,
            origin_id,
        })
    }

    /// Fresh stream row: weight one, no leverage estimate yet.
    pub fn unit(row: RowVector, origin_id: usize) -> Self {
        Self {
            row,
            weight: 1.0,
            leverage_estimate: None,
            origin_id,
        }
    }

    pub fn row(&self) -> &RowVector {
        &self.row
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn leverage_estimate(&self) -> Option<f64> {
        self.leverage_estimate
    }

    pub fn origin_id(&self) -> usize {
        self.origin_id
    }
}

/// Eigendecomposition of a symmetric PSD matrix, cached for repeated
/// pseudo-inverse solves. Eigenvalues at or below `cutoff` are treated as
/// zero and excluded from the range.
#[derive(Debug, Clone)]
pub struct SymmetricFactorization {
    eigenvectors: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    cutoff: f64,
    rank: usize,
}

impl SymmetricFactorization {
    fn new(matrix: &DMatrix<f64>) -> Self {
        let dim = matrix.nrows();
        let eigen = nalgebra::SymmetricEigen::new(matrix.clone());
        let max_abs = eigen.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
        let cutoff = dim as f64 * max_abs * PINV_RELATIVE_CUTOFF;
        let rank = eigen.eigenvalues.iter().filter(|&&l| l > cutoff).count();
        Self {
            eigenvectors: eigen.eigenvectors,
            eigenvalues: eigen.eigenvalues,
            cutoff,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `v^T M^+ v`, the quadratic form behind leverage scores.
    pub fn pinv_quadratic(&self, v: &RowVector) -> f64 {
        let y = self.eigenvectors.tr_mul(&v.to_dvector());
        let mut acc = 0.0;
        for (yk, &lk) in y.iter().zip(self.eigenvalues.iter()) {
            if lk > self.cutoff {
                acc += yk * yk / lk;
            }
        }
        acc
    }

    /// `M^+ v` via the cached eigenbasis.
    pub fn pinv_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut y = self.eigenvectors.tr_mul(v);
        for (k, yk) in y.iter_mut().enumerate() {
            let lk = self.eigenvalues[k];
            *yk = if lk > self.cutoff { *yk / lk } else { 0.0 };
        }
        &self.eigenvectors * y
    }

    /// The symmetric inverse square root `M^{-1/2}` restricted to the range.
    pub fn inv_sqrt(&self) -> DMatrix<f64> {
        let dim = self.eigenvectors.nrows();
        let mut scaled = self.eigenvectors.clone();
        for k in 0..dim {
            let lk = self.eigenvalues[k];
            let f = if lk > self.cutoff { 1.0 / lk.sqrt() } else { 0.0 };
            scaled.column_mut(k).scale_mut(f);
        }
        &scaled * self.eigenvectors.transpose()
    }

    /// Rebuild the matrix from the stored eigenpairs (audit path).
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.eigenvectors.clone();
        for k in 0..self.eigenvalues.len() {
            scaled.column_mut(k).scale_mut(self.eigenvalues[k]);
        }
        &scaled * self.eigenvectors.transpose()
    }

    /// Columns of the congruence map `Q_r Λ_r^{-1/2}` spanning the range.
    fn range_whitener(&self) -> DMatrix<f64> {
        let dim = self.eigenvectors.nrows();
        let mut cols = Vec::with_capacity(self.rank);
        for k in 0..dim {
            let lk = self.eigenvalues[k];
            if lk > self.cutoff {
                cols.push(self.eigenvectors.column(k) / lk.sqrt());
            }
        }
        DMatrix::from_columns(&cols)
    }
}

/// Accumulated `sum w_i a_i a_i^T`, exactly symmetric by construction,
/// with an optional cached factorization for solves.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    dim: usize,
    matrix: DMatrix<f64>,
    factorization: Option<SymmetricFactorization>,
}

impl GramAccumulator {
    pub fn zeros(dim: usize) -> Result<Self, LinalgError> {
        if dim == 0 {
            return Err(LinalgError::ZeroDimension);
        }
        Ok(Self {
            dim,
            matrix: DMatrix::zeros(dim, dim),
            factorization: None,
        })
    }

    pub fn identity(dim: usize) -> Result<Self, LinalgError> {
        let mut g = Self::zeros(dim)?;
        g.matrix = DMatrix::identity(dim, dim);
        Ok(g)
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self, LinalgError> {
        let dim = matrix.nrows();
        if dim == 0 {
            return Err(LinalgError::ZeroDimension);
        }
        if matrix.ncols() != dim {
            return Err(LinalgError::DimensionMismatch {
                expected: dim,
                got: matrix.ncols(),
            });
        }
        Ok(Self {
            dim,
            matrix,
            factorization: None,
        })
    }

    /// `sum w_i a_i a_i^T` over weighted rows.
    pub fn from_weighted_rows(rows: &[WeightedRow], dim: usize) -> Result<Self, LinalgError> {
        let mut g = Self::zeros(dim)?;
        for r in rows {
            g.add_outer(&r.row, r.weight)?;
        }
        Ok(g)
    }

    /// Unit-weight Gram of plain rows.
    pub fn from_rows(rows: &[RowVector], dim: usize) -> Result<Self, LinalgError> {
        let mut g = Self::zeros(dim)?;
        for r in rows {
            g.add_outer(r, 1.0)?;
        }
        Ok(g)
    }

    /// Rank-1 update `self += coeff * a a^T`, touching one triangle and
    /// mirroring so symmetry stays exact. Invalidate the cached
    /// factorization.
    pub fn add_outer(&mut self, row: &RowVector, coeff: f64) -> Result<(), LinalgError> {
        if row.dim() != self.dim {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim,
                got: row.dim(),
            });
        }
        let a = row.as_slice();
        for i in 0..self.dim {
            let cai = coeff * a[i];
            for j in i..self.dim {
                let v = self.matrix[(i, j)] + cai * a[j];
                self.matrix[(i, j)] = v;
                self.matrix[(j, i)] = v;
            }
        }
        self.factorization = None;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Compute and cache the symmetric factorization. Create this eagerly
    /// before sharing across threads; all other methods are read-only.
    pub fn factorize(&mut self) -> &SymmetricFactorization {
        if self.factorization.is_none() {
            self.factorization = Some(SymmetricFactorization::new(&self.matrix));
        }
        self.factorization.as_ref().unwrap()
    }

    pub fn factorization(&self) -> Option<&SymmetricFactorization> {
        self.factorization.as_ref()
    }

    fn fresh_factorization(&self) -> SymmetricFactorization {
        match &self.factorization {
            Some(f) => f.clone(),
            None => SymmetricFactorization::new(&self.matrix),
        }
    }

    pub fn rank(&mut self) -> usize {
        self.factorize().rank()
    }

    /// Spectral norm (largest absolute eigenvalue).
    pub fn spectral_norm(&self) -> f64 {
        spectral_norm_symmetric(&self.matrix)
    }
}

/// Spectral norm of a symmetric matrix via a deterministic eigensolve.
pub fn spectral_norm_symmetric(m: &DMatrix<f64>) -> f64 {
    nalgebra::SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &l| acc.max(l.abs()))
}

/// Outcome of certifying `candidate` against `reference` at accuracy
/// `epsilon`: the extreme generalized eigenvalues of the pencil restricted
/// to the reference's range, plus the numerical ranks of both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub epsilon: f64,
    pub passed: bool,
    pub rank_reference: usize,
    pub rank_candidate: usize,
}

/// Leverage scores `l_j = w_j a_j^T M^+ a_j` with `M = sum w a a^T`.
///
/// One factorization of `M`, then an `O(d^2)` solve per row. Scores sum to
/// the numerical rank of `M`; rank deficiency is handled by the
/// pseudo-inverse rather than reported as an error.
pub fn leverage_scores(rows: &[WeightedRow], dim: usize) -> Result<Vec<f64>, LinalgError> {
    if rows.is_empty() {
        return Err(LinalgError::EmptyInput);
    }
    let mut gram = GramAccumulator::from_weighted_rows(rows, dim)?;
    let fact = gram.factorize().clone();
    let score = |r: &WeightedRow| r.weight * fact.pinv_quadratic(&r.row);
    if rows.len() >= PARALLEL_LEVERAGE_THRESHOLD {
        use rayon::prelude::*;
        Ok(rows.par_iter().map(score).collect())
    } else {
        Ok(rows.iter().map(score).collect())
    }
}

/// Leverage scores of `rows` against an already-factorized external Gram.
pub fn leverage_scores_against(
    rows: &[WeightedRow],
    reference: &SymmetricFactorization,
) -> Vec<f64> {
    let score = |r: &WeightedRow| r.weight * reference.pinv_quadratic(&r.row);
    if rows.len() >= PARALLEL_LEVERAGE_THRESHOLD {
        use rayon::prelude::*;
        rows.par_iter().map(score).collect()
    } else {
        rows.iter().map(score).collect()
    }
}

/// Transform a full-rank row family into isotropic position, so that the
/// output Gram is the identity. Rows map through the symmetric inverse
/// square root of their Gram.
pub fn isotropize(rows: &[RowVector], dim: usize) -> Result<Vec<RowVector>, LinalgError> {
    let mut gram = GramAccumulator::from_rows(rows, dim)?;
    let fact = gram.factorize();
    if fact.rank() < dim {
        return Err(LinalgError::RankDeficient {
            rank: fact.rank(),
            dim,
        });
    }
    let t = fact.inv_sqrt();
    Ok(rows
        .iter()
        .map(|r| {
            let mapped = &t * r.to_dvector();
            RowVector {
                entries: mapped.iter().copied().collect(),
            }
        })
        .collect())
}

/// Certify `(1-eps) R <= C <= (1+eps) R` on the range of `R`.
///
/// The reference is factorized, the candidate is congruence-transformed
/// onto the whitened range basis, and the extreme eigenvalues of the
/// resulting symmetric pencil are compared against `1 -+ eps`. The check
/// also requires matching numerical ranks, so a candidate that collapsed
/// a direction cannot pass.
pub fn spectral_check(
    candidate: &GramAccumulator,
    reference: &GramAccumulator,
    epsilon: f64,
) -> Result<SpectralReport, LinalgError> {
    if candidate.dim() != reference.dim() {
        return Err(LinalgError::DimensionMismatch {
            expected: reference.dim(),
            got: candidate.dim(),
        });
    }
    let ref_fact = reference.fresh_factorization();
    let min_eig = ref_fact.min_eigenvalue();
    if min_eig < -1e-10 * ref_fact.max_eigenvalue().abs() {
        return Err(LinalgError::ReferenceIndefinite {
            min_eigenvalue: min_eig,
        });
    }
    let cand_fact = candidate.fresh_factorization();

    let (lambda_min, lambda_max) = if ref_fact.rank() == 0 {
        // Empty pencil: nothing to compare, ranks decide.
        (1.0, 1.0)
    } else {
        let p = ref_fact.range_whitener();
        let mut b = p.tr_mul(&(candidate.matrix() * &p));
        // Symmetrize: the congruence is symmetric up to roundoff.
        let bt = b.transpose();
        b = (&b + &bt) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(b);
        let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };

    let rank_reference = ref_fact.rank();
    let rank_candidate = cand_fact.rank();
    let passed =
        1.0 - epsilon <= lambda_min && lambda_max <= 1.0 + epsilon && rank_candidate == rank_reference;
    Ok(SpectralReport {
        lambda_min,
        lambda_max,
        epsilon,
        passed,
        rank_reference,
        rank_candidate,
    })
}

/// Flatten weighted rows into plain rows scaled by `sqrt(weight)`, so the
/// Gram of the output equals the weighted Gram of the input. Deleted
/// (weight-zero) rows are omitted.
pub fn emit_matrix(rows: &[WeightedRow]) -> Vec<RowVector> {
    rows.iter()
        .filter(|r| r.weight > 0.0)
        .map(|r| r.row.scaled(r.weight.sqrt()))
        .collect()
}
