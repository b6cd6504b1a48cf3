//! Dense linear-algebra helpers over nalgebra's SVD.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative cutoff used when a factorization has to decide which singular
/// values are zero.
pub const RANK_RTOL: f64 = 1e-10;

/// Thin SVD `A = U diag(s) Vᵀ` with `s` sorted in descending order.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let svd = a.clone().svd(true, true);
        let u = svd.u.expect("requested U");
        let v = svd.v_t.expect("requested Vᵀ").transpose();
        let s = svd.singular_values;

        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
        if order.iter().enumerate().all(|(pos, &i)| pos == i) {
            return Self { u, s, v };
        }
        Self {
            u: DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]),
            s: DVector::from_fn(order.len(), |i, _| s[order[i]]),
            v: DMatrix::from_fn(v.nrows(), order.len(), |r, c| v[(r, order[c])]),
        }
    }

    pub fn max(&self) -> f64 {
        self.s.iter().copied().fold(0.0, f64::max)
    }

    pub fn rank(&self, rel_tol: f64) -> usize {
        let cutoff = rel_tol * self.max();
        self.s.iter().filter(|&&x| x > cutoff).count()
    }
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(a);
    let Some(&max) = s.first() else { return 0 };
    if max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rel_tol * max).count()
}

/// Moore-Penrose pseudo-inverse of a matrix that has full rank `min(n, d)`.
///
/// For a tall matrix this is `(AᵀA)⁻¹Aᵀ`; for a wide one `Aᵀ(AAᵀ)⁻¹`. Both are
/// evaluated through the SVD.
pub fn full_rank_pinv(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, d) = a.shape();
    if n == 0 || d == 0 {
        return Err(Error::UndefinedInput("empty matrix".into()));
    }
    let svd = ThinSvd::new(a);
    let required = n.min(d);
    let rank = svd.rank(RANK_RTOL);
    if rank < required {
        return Err(Error::Singular {
            rank,
            required,
            dimension: if n >= d { "column" } else { "row" },
        });
    }
    let inv_s = svd.s.map(|x| 1.0 / x);
    Ok(&svd.v * DMatrix::from_diagonal(&inv_s) * svd.u.transpose())
}

/// Minimum-norm least-squares solution of `A X = B` (all right-hand sides
/// at once), discarding singular values below `rel_cutoff · s_max`.
pub fn least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_cutoff: f64) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "system has {} rows but right-hand side has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let svd = ThinSvd::new(a);
    let cutoff = rel_cutoff * svd.max();
    let inv_s = svd.s.map(|x| if x > cutoff { 1.0 / x } else { 0.0 });
    let utb = svd.u.transpose() * b;
    Ok(&svd.v * DMatrix::from_diagonal(&inv_s) * utb)
}

/// Orthonormal basis for the column space of `a`.
pub fn column_basis(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = ThinSvd::new(a);
    let rank = svd.rank(rel_tol);
    svd.u.columns(0, rank).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_descending() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 5.0, 3.0]));
        let svd = ThinSvd::new(&a);
        assert_eq!(svd.s.as_slice(), &[5.0, 3.0, 1.0]);
        let back = &svd.u * DMatrix::from_diagonal(&svd.s) * svd.v.transpose();
        assert!((back - a).amax() < 1e-12);
    }

    #[test]
    fn pinv_of_wide_matrix_is_right_inverse() {
        let a = DMatrix::from_fn(3, 5, |r, c| ((r * 7 + c * 3) % 5) as f64 + (r == c) as u8 as f64);
        let p = full_rank_pinv(&a).unwrap();
        assert!((&a * p - DMatrix::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn pinv_reports_deficiency() {
        let a = DMatrix::from_fn(4, 2, |r, _| r as f64);
        match full_rank_pinv(&a) {
            Err(Error::Singular { rank: 1, required: 2, dimension: "column" }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn least_squares_exact_system() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let x = DMatrix::from_row_slice(2, 1, &[2.0, -1.0]);
        let b = &a * &x;
        let sol = least_squares(&a, &b, RANK_RTOL).unwrap();
        assert!((sol - x).amax() < 1e-12);
    }
}
