//! Thin SVD backends and singular-value thresholding.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::SolverError;
use crate::scalar::Scalar;

const RSVD_OVERSAMPLE: usize = 10;
const RSVD_POWER_ITERS: usize = 4;
const RSVD_SEED: u64 = 0x0005_eed0_f5bd;

/// Thin singular value decomposition `m = u · diag(s) · vt`, values descending.
#[derive(Debug, Clone)]
pub struct ThinSvd<T: Scalar> {
    pub u: DMatrix<T>,
    pub s: Vec<T>,
    pub vt: DMatrix<T>,
}

impl<T: Scalar> ThinSvd<T> {
    pub fn rank_at(&self, rel_tol: T) -> usize {
        match self.s.first() {
            Some(&top) if top > T::zero() => self.s.iter().filter(|&&v| v > rel_tol * top).count(),
            _ => 0,
        }
    }
}

/// Dense thin SVD, computed in `f64` by faer. nalgebra's bidiagonal SVD can
/// return wrong factors for exactly rank-deficient input, which soft-impute
/// produces at every step.
fn full_svd<T: Scalar>(m: &DMatrix<T>) -> Result<ThinSvd<T>, SolverError> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(ThinSvd { u: DMatrix::zeros(rows, 0), s: Vec::new(), vt: DMatrix::zeros(0, cols) });
    }
    let a = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)].to_f64_lossy());
    let svd =
        a.thin_svd().map_err(|e| SolverError::Numerical(format!("SVD failed on a {rows}x{cols} matrix: {e:?}")))?;
    let (u, v, s) = (svd.U(), svd.V(), svd.S().column_vector());
    let k = rows.min(cols);
    Ok(ThinSvd {
        u: DMatrix::from_fn(rows, k, |i, j| T::lit(u[(i, j)])),
        s: (0..k).map(|j| T::lit(s[j])).collect(),
        vt: DMatrix::from_fn(k, cols, |i, j| T::lit(v[(j, i)])),
    })
}

fn orthonormal_basis<T: Scalar>(m: DMatrix<T>) -> DMatrix<T> {
    m.qr().q()
}

/// Randomized range finder followed by an exact SVD of the projected matrix.
/// Returns at most `rank` singular triplets.
fn randomized_svd<T: Scalar>(m: &DMatrix<T>, rank: usize) -> Result<ThinSvd<T>, SolverError> {
    let (rows, cols) = m.shape();
    let sketch = (rank + RSVD_OVERSAMPLE).min(rows.min(cols));
    let mut rng = ChaCha8Rng::seed_from_u64(RSVD_SEED);
    let omega = DMatrix::from_fn(cols, sketch, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::lit(z)
    });
    let mut q = orthonormal_basis(m * omega);
    for _ in 0..RSVD_POWER_ITERS {
        let z = orthonormal_basis(m.transpose() * &q);
        q = orthonormal_basis(m * z);
    }
    let small = q.transpose() * m;
    let inner = full_svd(&small)?;
    let keep = rank.min(inner.s.len());
    Ok(ThinSvd {
        u: (q * inner.u).columns(0, keep).into_owned(),
        s: inner.s[..keep].to_vec(),
        vt: inner.vt.rows(0, keep).into_owned(),
    })
}

/// Thin SVD of `m`. With `rank_cap = Some(r)` a randomized sketch is used and
/// only the leading `r` triplets are returned.
pub fn thin_svd<T: Scalar>(m: &DMatrix<T>, rank_cap: Option<usize>) -> Result<ThinSvd<T>, SolverError> {
    if m.iter().any(|v| !v.is_finite_value()) {
        return Err(SolverError::Numerical("SVD input contains non-finite entries".into()));
    }
    match rank_cap {
        Some(r) if r + RSVD_OVERSAMPLE < m.nrows().min(m.ncols()) => randomized_svd(m, r.max(1)),
        Some(r) => {
            let mut svd = full_svd(m)?;
            let keep = r.min(svd.s.len());
            svd.s.truncate(keep);
            svd.u = svd.u.columns(0, keep).into_owned();
            svd.vt = svd.vt.rows(0, keep).into_owned();
            Ok(svd)
        }
        None => full_svd(m),
    }
}

/// Largest singular value.
pub fn spectral_norm<T: Scalar>(m: &DMatrix<T>) -> Result<T, SolverError> {
    if m.is_empty() {
        return Ok(T::zero());
    }
    Ok(full_svd(m)?.s.first().copied().unwrap_or_else(T::zero))
}

/// Result of singular-value thresholding.
#[derive(Debug, Clone)]
pub struct Shrunk<T: Scalar> {
    pub matrix: DMatrix<T>,
    /// Shrunk singular values, descending, zeros dropped.
    pub singular_values: Vec<T>,
}

impl<T: Scalar> Shrunk<T> {
    pub fn nuclear_norm(&self) -> T {
        self.singular_values.iter().fold(T::zero(), |a, &b| a + b)
    }
}

pub(crate) fn svt_with_cap<T: Scalar>(
    m: &DMatrix<T>,
    lambda: T,
    rank_cap: Option<usize>,
) -> Result<Shrunk<T>, SolverError> {
    if lambda == T::zero() && rank_cap.is_none() {
        if m.iter().any(|v| !v.is_finite_value()) {
            return Err(SolverError::Numerical("svt input contains non-finite entries".into()));
        }
        // Exact identity: the prox of the zero function.
        let svd = full_svd(m)?;
        return Ok(Shrunk {
            matrix: m.clone(),
            singular_values: svd.s.into_iter().filter(|&v| v > T::zero()).collect(),
        });
    }
    let mut cap = rank_cap;
    let svd = loop {
        let svd = thin_svd(m, cap)?;
        match cap {
            // Every returned value survives the threshold, so some may be
            // missing: widen the sketch until one falls below λ.
            Some(r) if svd.s.len() == r && svd.s.last().is_some_and(|&v| v > lambda) => {
                cap = if 2 * r + RSVD_OVERSAMPLE < m.nrows().min(m.ncols()) { Some(2 * r) } else { None };
            }
            _ => break svd,
        }
    };
    let kept: Vec<usize> = (0..svd.s.len()).filter(|&i| svd.s[i] > lambda).collect();
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    let mut values = Vec::with_capacity(kept.len());
    for &i in &kept {
        let shrunk = svd.s[i] - lambda;
        values.push(shrunk);
        let u = svd.u.column(i);
        let v = svd.vt.row(i);
        out.ger(shrunk, &u, &v.transpose(), T::one());
    }
    Ok(Shrunk { matrix: out, singular_values: values })
}

/// Singular-value soft-thresholding: the minimizer of
/// `½‖X − m‖²_F + λ‖X‖_*`, i.e. `U · max(Σ − λ, 0) · Vᵀ`.
pub fn svt<T: Scalar>(m: &DMatrix<T>, lambda: T) -> Result<DMatrix<T>, SolverError> {
    if !(lambda >= T::zero()) {
        return Err(SolverError::Input(format!("svt threshold must be nonnegative, got {lambda}")));
    }
    Ok(svt_with_cap(m, lambda, None)?.matrix)
}

/// Nuclear norm `‖m‖_*`.
pub fn nuclear_norm<T: Scalar>(m: &DMatrix<T>) -> Result<T, SolverError> {
    Ok(full_svd(m)?.s.iter().fold(T::zero(), |a, &b| a + b))
}
