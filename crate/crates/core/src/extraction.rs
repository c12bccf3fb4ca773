//! Common-basis extraction from an ensemble of fine-tuned attention blocks.
//!
//! Each ensemble member contributes its stacked `[W_Q; W_K; W_V]` matrix.
//! The members are averaged, the mean is decomposed, and the leading right
//! singular vectors become the `r × d_k` matrix that replaces an adapter's
//! `B` factor. A PCA route is provided for the explained-variance
//! comparison only; it is never used to initialize adapters.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cumulative_fractions, explained_variance_counts, svd, sym_eigen, EigenFactors, Matrix};

/// Query, key and value projections of one attention block, plus their
/// vertical concatenation in Q, K, V order.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedAttentionWeights {
    stacked: Matrix,
    d_model: usize,
}

impl StackedAttentionWeights {
    pub fn new(w_q: &Matrix, w_k: &Matrix, w_v: &Matrix) -> Result<Self> {
        for other in [w_k, w_v] {
            if other.shape() != w_q.shape() {
                return Err(Error::ShapeMismatch {
                    op: "stack_qkv",
                    left: w_q.shape(),
                    right: other.shape(),
                });
            }
        }
        Ok(Self {
            stacked: Matrix::vstack(&[w_q, w_k, w_v])?,
            d_model: w_q.rows(),
        })
    }

    pub fn from_stacked(stacked: Matrix) -> Result<Self> {
        if stacked.rows() % 3 != 0 {
            return Err(Error::NotStackable { rows: stacked.rows() });
        }
        Ok(Self {
            d_model: stacked.rows() / 3,
            stacked,
        })
    }

    pub fn stacked(&self) -> &Matrix {
        &self.stacked
    }

    pub fn stacked_mut(&mut self) -> &mut Matrix {
        &mut self.stacked
    }

    pub fn into_stacked(self) -> Matrix {
        self.stacked
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn d_k(&self) -> usize {
        self.stacked.cols()
    }

    pub fn w_q(&self) -> Matrix {
        self.block(0)
    }

    pub fn w_k(&self) -> Matrix {
        self.block(1)
    }

    pub fn w_v(&self) -> Matrix {
        self.block(2)
    }

    fn block(&self, i: usize) -> Matrix {
        self.stacked
            .row_slice(i * self.d_model, (i + 1) * self.d_model)
            .expect("block bounds are valid by construction")
    }
}

/// Attention weights from `n ≥ 1` models sharing one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<StackedAttentionWeights>,
    labels: Vec<String>,
}

impl Ensemble {
    pub fn new(members: Vec<(String, StackedAttentionWeights)>) -> Result<Self> {
        let Some((_, first)) = members.first() else {
            return Err(Error::EmptyEnsemble);
        };
        let expected = first.stacked().shape();
        for (label, m) in &members {
            if m.stacked().shape() != expected {
                return Err(Error::EnsembleShape {
                    label: label.clone(),
                    expected,
                    found: m.stacked().shape(),
                });
            }
        }
        let (labels, members) = members.into_iter().unzip();
        Ok(Self { members, labels })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[StackedAttentionWeights] {
        &self.members
    }

    pub fn source_labels(&self) -> &[String] {
        &self.labels
    }
}

/// Entrywise mean of the members' stacked matrices.
///
/// Members are summed in label order (ties keep insertion order) so the
/// result does not depend on how the ensemble was assembled.
pub fn merge_ensemble(e: &Ensemble) -> Result<Matrix> {
    if e.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut order: Vec<usize> = (0..e.len()).collect();
    order.sort_by(|&a, &b| e.labels[a].cmp(&e.labels[b]).then(a.cmp(&b)));
    let mut sum = e.members[order[0]].stacked().clone();
    for &i in &order[1..] {
        sum.add_scaled_in_place(1.0, e.members[i].stacked())?;
    }
    let n = e.len() as f64;
    for x in sum.as_mut_slice() {
        *x /= n;
    }
    Ok(sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisMethod {
    Svd,
    Pca,
}

impl BasisMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BasisMethod::Svd => "svd",
            BasisMethod::Pca => "pca",
        }
    }
}

/// `r × d_k` replacement for an adapter's `B` factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonBasis {
    pub b: Matrix,
    pub rank: usize,
    pub method: BasisMethod,
    /// Fraction of spectral energy held by the retained components.
    pub variance_captured: f64,
    /// Set when `rank` exceeds half of `min(rows, cols)`, i.e. the basis is
    /// no longer small next to the weight it was extracted from.
    pub exceeds_low_rank_guideline: bool,
}

fn check_rank(w0: &Matrix, r: usize) -> Result<bool> {
    let max = w0.rows().min(w0.cols());
    if r == 0 || r > max {
        return Err(Error::RankOutOfRange { rank: r, max });
    }
    Ok(2 * r > max)
}

/// Leading `r` rows of `Vᵀ` from the SVD of `w0`.
pub fn extract_common_basis_svd(w0: &Matrix, r: usize) -> Result<CommonBasis> {
    let exceeds = check_rank(w0, r)?;
    let f = svd(w0)?;
    let energy = f.squared_singular_values();
    let total: f64 = energy.iter().sum();
    let variance_captured = if total > 0.0 {
        if r == energy.len() {
            1.0
        } else {
            energy[..r].iter().sum::<f64>() / total
        }
    } else {
        0.0
    };
    Ok(CommonBasis {
        b: f.vt.row_slice(0, r)?,
        rank: r,
        method: BasisMethod::Svd,
        variance_captured,
        exceeds_low_rank_guideline: exceeds,
    })
}

/// Principal components of the rows of `w0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// Mean row (`1 × cols`).
    pub mean: Matrix,
    /// Covariance eigenvalues, clamped at zero, descending.
    pub variances: Vec<f64>,
    /// Columns are principal directions.
    pub components: Matrix,
}

impl Pca {
    /// Number of components whose variance exceeds round-off level.
    pub fn effective_rank(&self) -> usize {
        let top = self.variances.first().copied().unwrap_or(0.0);
        let tol = top.max(f64::MIN_POSITIVE) * 1e-10;
        if top <= 0.0 {
            return 0;
        }
        self.variances.iter().filter(|v| **v > tol).count()
    }
}

/// Rows are data points; covariance is `(X − μ)ᵀ(X − μ) / (rows − 1)`.
pub fn pca(w0: &Matrix) -> Result<Pca> {
    let (m, n) = w0.shape();
    let mut mean = Matrix::zeros(1, n);
    for r in 0..m {
        for (acc, x) in mean.as_mut_slice().iter_mut().zip(w0.row(r)) {
            *acc += x;
        }
    }
    for x in mean.as_mut_slice() {
        *x /= m as f64;
    }
    let mut centered = w0.clone();
    for r in 0..m {
        for (x, mu) in centered.row_mut(r).iter_mut().zip(mean.as_slice()) {
            *x -= mu;
        }
    }
    let denom = if m > 1 { (m - 1) as f64 } else { 1.0 };
    let cov = centered.t_matmul(&centered)?.scale(1.0 / denom);
    let EigenFactors {
        eigenvalues,
        eigenvectors,
    } = sym_eigen(&cov)?;
    Ok(Pca {
        mean,
        variances: eigenvalues.into_iter().map(|v| v.max(0.0)).collect(),
        components: eigenvectors,
    })
}

/// PCA counterpart of [`extract_common_basis_svd`]: the first `r` principal
/// directions as rows. Only used for the variance comparison.
pub fn extract_common_basis_pca(w0: &Matrix, r: usize) -> Result<CommonBasis> {
    let exceeds = check_rank(w0, r)?;
    let p = pca(w0)?;
    let effective_rank = p.effective_rank();
    if r > effective_rank {
        return Err(Error::RankExceedsEffective { rank: r, effective_rank });
    }
    let total: f64 = p.variances.iter().sum();
    let b = p.components.transpose().row_slice(0, r)?;
    Ok(CommonBasis {
        b,
        rank: r,
        method: BasisMethod::Pca,
        variance_captured: p.variances[..r].iter().sum::<f64>() / total,
        exceeds_low_rank_guideline: exceeds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRow {
    pub method: BasisMethod,
    pub threshold: f64,
    pub count: usize,
}

/// Component counts per threshold for both methods, plus the cumulative
/// explained-variance curves behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub rows: Vec<VarianceRow>,
    pub svd_curve: Vec<f64>,
    pub pca_curve: Vec<f64>,
}

impl VarianceReport {
    pub fn count(&self, method: BasisMethod, threshold: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.threshold == threshold)
            .map(|r| r.count)
    }
}

/// SVD counts use uncentered energy `σᵢ²`; PCA counts use centered
/// covariance eigenvalues.
pub fn variance_report(w0: &Matrix, thresholds: &[f64]) -> Result<VarianceReport> {
    let energy = svd(w0)?.squared_singular_values();
    let variances = pca(w0)?.variances;
    let mut rows = Vec::with_capacity(2 * thresholds.len());
    for &t in thresholds {
        rows.push(VarianceRow {
            method: BasisMethod::Svd,
            threshold: t,
            count: explained_variance_counts(&energy, t)?,
        });
    }
    for &t in thresholds {
        rows.push(VarianceRow {
            method: BasisMethod::Pca,
            threshold: t,
            count: explained_variance_counts(&variances, t)?,
        });
    }
    Ok(VarianceReport {
        rows,
        svd_curve: cumulative_fractions(&energy)?,
        pca_curve: cumulative_fractions(&variances)?,
    })
}
