//! Small dense linear-algebra helpers shared by the GP and UQ code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Number of jitter retries after the first unjittered attempt.
pub const MAX_JITTER_RETRIES: usize = 6;
/// Relative size of the first jitter increment.
pub const BASE_JITTER: f64 = 1e-12;

/// Lower-triangular factor of a symmetric PSD matrix, plus the diagonal jitter it needed.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    pub lower: DMatrix<f64>,
    pub jitter: f64,
}

impl PsdFactor {
    /// A zero factor, used when the matrix is identically zero.
    pub fn zero(n: usize) -> Self {
        Self {
            lower: DMatrix::zeros(n, n),
            jitter: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Number of columns of `L`, i.e. the length of the `z` that `color` takes.
    pub fn rank(&self) -> usize {
        self.lower.ncols()
    }

    /// `L z` for a standard-normal vector `z`.
    pub fn color(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.lower * z
    }
}

/// Matrices above this size are factored with diagonal pivoting and early
/// termination instead of jittered dense Cholesky.
pub const PIVOTED_MIN_DIM: usize = 1024;

/// Pivoted partial Cholesky: `L` is `n × r` with `L Lᵀ` matching `mat` up to a
/// residual whose diagonal is at most `tol`. Stops early on the first pivot
/// `≤ tol`, so rank-deficient matrices cost `O(n r²)`.
pub fn pivoted_cholesky(mat: &DMatrix<f64>, tol: f64) -> PsdFactor {
    let n = mat.nrows();
    let mut diag: Vec<f64> = (0..n).map(|i| mat[(i, i)]).collect();
    let mut used = vec![false; n];
    // Row-major storage keeps the inner products contiguous.
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut rank = 0;
    loop {
        let Some((p, &dp)) = diag
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .max_by(|a, b| a.1.total_cmp(b.1))
        else {
            break;
        };
        if !(dp > tol) {
            break;
        }
        used[p] = true;
        let piv = dp.sqrt();
        let row_p = std::mem::take(&mut rows[p]);
        for i in 0..n {
            let v = if i == p {
                piv
            } else if used[i] {
                0.0
            } else {
                let dot: f64 = rows[i].iter().zip(&row_p).map(|(a, b)| a * b).sum();
                let v = (mat[(i, p)] - dot) / piv;
                diag[i] -= v * v;
                v
            };
            rows[i].push(v);
        }
        rows[p] = row_p;
        rows[p].push(piv);
        rank += 1;
    }
    PsdFactor {
        lower: DMatrix::from_fn(n, rank, |i, k| rows[i][k]),
        jitter: 0.0,
    }
}

/// Cholesky with jitter escalation: first try the matrix as is, then add
/// `1e-12 * scale * 10^k` on the diagonal for `k = 0..6`.
///
/// `scale` is the reference magnitude for the jitter, usually `tr(K)/n` of
/// the matrix itself or of the prior covariance it was derived from.
/// Returns `None` if every attempt fails.
pub fn cholesky_jittered(mat: &DMatrix<f64>, scale: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    if let Some(ch) = Cholesky::new(mat.clone()) {
        return Some((ch, 0.0));
    }
    let scale = if scale.is_finite() && scale > 0.0 {
        scale
    } else {
        mean_abs_diag(mat)
    };
    if !(scale > 0.0) {
        return None;
    }
    let mut jitter = BASE_JITTER * scale;
    for _ in 0..MAX_JITTER_RETRIES {
        let mut m = mat.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(m) {
            return Some((ch, jitter));
        }
        jitter *= 10.0;
    }
    None
}

/// Factor a covariance used for sampling. Identically-zero matrices give a
/// zero factor so that draws collapse onto the mean.
pub fn psd_factor(mat: &DMatrix<f64>, scale: f64) -> Option<PsdFactor> {
    let n = mat.nrows();
    if n == 0 || mat.iter().all(|v| v.abs() <= f64::MIN_POSITIVE) {
        return Some(PsdFactor::zero(n));
    }
    if n > PIVOTED_MIN_DIM {
        let scale = if scale.is_finite() && scale > 0.0 {
            scale
        } else {
            mean_abs_diag(mat)
        };
        return Some(pivoted_cholesky(mat, BASE_JITTER * scale));
    }
    cholesky_jittered(mat, scale).map(|(ch, jitter)| PsdFactor {
        lower: ch.l(),
        jitter,
    })
}

pub fn mean_abs_diag(mat: &DMatrix<f64>) -> f64 {
    let n = mat.nrows();
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|i| mat[(i, i)].abs()).sum::<f64>() / n as f64
}

pub fn trace(mat: &DMatrix<f64>) -> f64 {
    (0..mat.nrows().min(mat.ncols())).map(|i| mat[(i, i)]).sum()
}

/// In-place `(A + Aᵀ) / 2`.
pub fn symmetrize(mat: &mut DMatrix<f64>) {
    let n = mat.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (mat[(i, j)] + mat[(j, i)]);
            mat[(i, j)] = v;
            mat[(j, i)] = v;
        }
    }
}

/// Eigenvalues of the symmetric part of `mat`, ascending.
pub fn sym_eigenvalues(mat: &DMatrix<f64>) -> Vec<f64> {
    let mut s = mat.clone();
    symmetrize(&mut s);
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(mat: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(mat).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(mat: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(mat).last().copied().unwrap_or(0.0)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivoted_cholesky_reproduces_low_rank() {
        let v = DMatrix::from_fn(6, 2, |i, k| ((i + 1) * (k + 2)) as f64 * 0.1 + k as f64);
        let m = &v * v.transpose();
        let f = pivoted_cholesky(&m, 1e-12);
        assert_eq!(f.rank(), 2);
        assert!((&f.lower * f.lower.transpose() - &m).abs().max() < 1e-12);
        let full = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let g = pivoted_cholesky(&full, 0.0);
        assert!((&g.lower * g.lower.transpose() - &full).abs().max() < 1e-14);
    }

    #[test]
    fn jitter_rescues_rank_deficient_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (ch, jitter) = cholesky_jittered(&m, 1.0).unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-6);
        let rec = ch.l() * ch.l().transpose();
        assert!((rec[(0, 1)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn indefinite_matrix_fails() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(cholesky_jittered(&m, 1.0).is_none());
    }

    #[test]
    fn zero_matrix_gives_zero_factor() {
        let f = psd_factor(&DMatrix::zeros(3, 3), 1.0).unwrap();
        assert_eq!(f.lower, DMatrix::zeros(3, 3));
    }
}
