use super::{sym_eigen, Matrix, DEFAULT_EIGEN_TOL};
use crate::error::Result;
use crate::scalar::Scalar;

/// Singular values below this are treated as zero when forming `U`.
pub const SIGMA_GUARD: f64 = 1e-12;

/// Thin SVD `M = U diag(σ) Vᵀ` with `k = min(rows, cols)` singular triplets,
/// `σ` descending.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    pub u: Matrix<T>,
    pub sigma: Vec<T>,
    pub v: Matrix<T>,
}

impl<T: Scalar> Svd<T> {
    /// `U diag(f(σ)) Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        let mut us = self.u.clone();
        let shrunk: Vec<T> = self.sigma.iter().map(|&s| f(s)).collect();
        for i in 0..us.rows() {
            for (x, &s) in us.row_mut(i).iter_mut().zip(&shrunk) {
                *x *= s;
            }
        }
        us.matmul_t(&self.v).expect("thin factors share the inner dimension")
    }

    pub fn reconstruct(&self) -> Matrix<T> {
        self.reconstruct_with(|s| s)
    }

    pub fn nuclear_norm(&self) -> T {
        self.sigma.iter().copied().sum()
    }
}

/// Thin SVD through the eigendecomposition of the smaller Gram matrix.
///
/// With `rows ≥ cols`, `V` comes from `MᵀM`, `σ_j = ‖M v_j‖` and `U = M V / σ`;
/// columns of `U` whose `σ` falls under [`SIGMA_GUARD`] are completed to an
/// orthonormal set instead. Wide matrices are handled through `Mᵀ`.
pub fn svd_thin<T: Scalar>(m: &Matrix<T>) -> Result<Svd<T>> {
    if m.rows() < m.cols() {
        let t = svd_thin(&m.transpose())?;
        return Ok(Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }
    let (rows, k) = m.shape();
    let gram = m.t_matmul(m)?;
    let eig = sym_eigen(&gram, T::lit(DEFAULT_EIGEN_TOL))?;

    // σ_j = ‖M v_j‖ keeps small singular values accurate; √λ_j would only
    // resolve them to about √ε.
    let mv_raw = m.matmul(&eig.vectors)?;
    let norms: Vec<T> = (0..k)
        .map(|j| mv_raw.column(j).iter().map(|&x| x * x).sum::<T>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).expect("finite norms"));
    let sigma: Vec<T> = order.iter().map(|&j| norms[j]).collect();
    let v = Matrix::from_fn(k, k, |i, j| eig.vectors.get(i, order[j]));
    let mv = Matrix::from_fn(rows, k, |i, j| mv_raw.get(i, order[j]));

    let guard = T::lit(SIGMA_GUARD);
    let mut u_cols: Vec<Vec<T>> = Vec::with_capacity(k);
    let mut pending = Vec::new();
    for (j, &s) in sigma.iter().enumerate() {
        if s > guard {
            u_cols.push(mv.column(j).into_iter().map(|x| x / s).collect());
        } else {
            u_cols.push(Vec::new());
            pending.push(j);
        }
    }
    complete_orthonormal(&mut u_cols, &pending, rows);

    let u = Matrix::from_fn(rows, k, |i, j| u_cols[j][i]);
    Ok(Svd { u, sigma, v })
}

/// Fills the columns listed in `pending` with unit vectors orthogonal to all
/// other columns, drawing candidates from the standard basis.
fn complete_orthonormal<T: Scalar>(cols: &mut [Vec<T>], pending: &[usize], rows: usize) {
    let mut basis = 0;
    for &slot in pending {
        while basis < rows {
            let mut cand = vec![T::zero(); rows];
            cand[basis] = T::one();
            basis += 1;
            // Two passes of Gram-Schmidt for stability.
            for _ in 0..2 {
                for c in cols.iter().filter(|c| !c.is_empty()) {
                    let proj: T = c.iter().zip(&cand).map(|(&a, &b)| a * b).sum();
                    for (x, &a) in cand.iter_mut().zip(c) {
                        *x -= proj * a;
                    }
                }
            }
            let norm = cand.iter().map(|&x| x * x).sum::<T>().sqrt();
            if norm > T::lit(1e-6) {
                cols[slot] = cand.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}
