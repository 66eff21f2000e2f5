use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Cap on full Jacobi sweeps before reporting non-convergence.
pub const MAX_JACOBI_SWEEPS: usize = 100;

/// Default off-diagonal Frobenius tolerance (relative to `max(1, ‖M‖_F)`).
pub const DEFAULT_EIGEN_TOL: f64 = 1e-12;

/// Eigendecomposition of a symmetric matrix. `vectors` holds one
/// orthonormal eigenvector per column, in the order of `values` (ascending).
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    pub vectors: Matrix<T>,
    pub sweeps: usize,
}

impl<T: Scalar> SymEigen<T> {
    pub fn min(&self) -> T {
        self.values.first().copied().unwrap_or_else(T::zero)
    }

    pub fn max(&self) -> T {
        self.values.last().copied().unwrap_or_else(T::zero)
    }

    /// `V diag(λ) Vᵀ`.
    pub fn reconstruct(&self) -> Matrix<T> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for i in 0..n {
            for (v, &l) in scaled.row_mut(i).iter_mut().zip(&self.values) {
                *v *= l;
            }
        }
        scaled
            .matmul_t(&self.vectors)
            .expect("square factors share a shape")
    }
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// The input is symmetrized as `(M + Mᵀ)/2` before iterating. Sweeps stop
/// once the off-diagonal Frobenius norm falls below `tol · max(1, ‖M‖_F)`;
/// after [`MAX_JACOBI_SWEEPS`] sweeps a [`Error::Convergence`] carrying the
/// remaining off-diagonal norm is returned.
pub fn sym_eigen<T: Scalar>(m: &Matrix<T>, tol: T) -> Result<SymEigen<T>> {
    sym_eigen_capped(m, tol, MAX_JACOBI_SWEEPS)
}

/// [`sym_eigen`] with an explicit sweep cap.
pub fn sym_eigen_capped<T: Scalar>(m: &Matrix<T>, tol: T, max_sweeps: usize) -> Result<SymEigen<T>> {
    if !m.is_square() {
        return Err(Error::contract(format!(
            "sym_eigen needs a square matrix, got {:?}",
            m.shape()
        )));
    }
    if !(tol > T::zero()) {
        return Err(Error::param("eigen tolerance must be positive"));
    }
    let scale = m.max_abs().max(T::one());
    let sym_tol = T::lit(1e-10).max(T::epsilon() * T::lit(100.0)) * scale;
    if !m.is_symmetric(sym_tol) {
        return Err(Error::contract("sym_eigen input is not symmetric"));
    }

    let n = m.rows();
    let mut a = m.symmetrized()?;
    let mut v = Matrix::<T>::identity(n);
    let target = tol * a.frobenius_norm().max(T::one());

    let off_norm = |a: &Matrix<T>| -> T {
        let mut s = T::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a.get(i, j) * a.get(i, j);
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    let mut off = off_norm(&a);
    while off > target {
        if sweeps == max_sweeps {
            return Err(Error::Convergence {
                sweeps,
                residual: off.as_f64(),
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == T::zero() {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
                a.set(p, q, T::zero());
                a.set(q, p, T::zero());
            }
        }
        off = off_norm(&a);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).partial_cmp(&a.get(j, j)).expect("finite eigenvalues"));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let vectors = Matrix::from_fn(n, n, |i, k| v.get(i, order[k]));
    Ok(SymEigen {
        values,
        vectors,
        sweeps,
    })
}

/// `A ← Pᵀ A P`, `V ← V P` for the plane rotation in `(p, q)`.
fn rotate<T: Scalar>(a: &mut Matrix<T>, v: &mut Matrix<T>, p: usize, q: usize, c: T, s: T) {
    let n = a.rows();
    for k in 0..n {
        let akp = a.get(k, p);
        let akq = a.get(k, q);
        a.set(k, p, c * akp - s * akq);
        a.set(k, q, s * akp + c * akq);
    }
    for k in 0..n {
        let apk = a.get(p, k);
        let aqk = a.get(q, k);
        a.set(p, k, c * apk - s * aqk);
        a.set(q, k, s * apk + c * aqk);
    }
    for k in 0..n {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type M = Matrix<f64>;

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> M {
        let b = M::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        b.add(&b.transpose()).unwrap()
    }

    fn check_decomposition(m: &M, e: &SymEigen<f64>) {
        let n = m.rows();
        assert!(e.reconstruct().max_abs_diff(m).unwrap() <= 1e-8);
        let gram = e.vectors.t_matmul(&e.vectors).unwrap();
        assert!(gram.max_abs_diff(&M::identity(n)).unwrap() <= 1e-8);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let e = sym_eigen(&M::identity(4), 1e-12).unwrap();
        assert_eq!(e.values, vec![1.0; 4]);
    }

    #[test]
    fn diagonal_is_sorted() {
        let e = sym_eigen(&M::diag(&[3.0, 1.0, 2.0]), 1e-12).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn classic_two_by_two() {
        let m = M::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let e = sym_eigen(&m, 1e-12).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 3.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        // Eigenvectors are defined up to sign.
        let v0 = e.vectors.column(0);
        let v1 = e.vectors.column(1);
        assert!((v0[0] * v0[1] + 0.5).abs() < 1e-12 && (v0[0].abs() - h).abs() < 1e-12);
        assert!((v1[0] * v1[1] - 0.5).abs() < 1e-12 && (v1[0].abs() - h).abs() < 1e-12);
        check_decomposition(&m, &e);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(sym_eigen(&M::zeros(2, 3), 1e-12), Err(Error::Contract(_))));
        let asym = M::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigen(&asym, 1e-12), Err(Error::Contract(_))));
        assert!(sym_eigen(&M::identity(2), 0.0).is_err());
    }

    #[test]
    fn sweep_cap_reports_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_symmetric(12, &mut rng);
        match sym_eigen_capped(&m, 1e-12, 1) {
            Err(Error::Convergence { sweeps, residual }) => {
                assert_eq!(sweeps, 1);
                assert!(residual > 0.0);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn single_precision_decomposes() {
        let m = Matrix::<f32>::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let e = sym_eigen(&m, 1e-6).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-6 && (e.values[1] - 3.0).abs() < 1e-6);
    }

    proptest::proptest! {
        #[test]
        fn random_symmetric_decomposes(seed in 0u64..200, n in 1usize..16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_symmetric(n, &mut rng);
            let e = sym_eigen(&m, 1e-12).unwrap();
            check_decomposition(&m, &e);
            let sum: f64 = e.values.iter().sum();
            let tr = m.trace();
            proptest::prop_assert!((sum - tr).abs() <= 1e-9 * tr.abs().max(1.0));
        }
    }
}
