//! Symmetric eigendecomposition by cyclic Jacobi rotations, and the matrix
//! functions built on it.

use crate::{DenseMatrix, Scalar};

/// Maximum number of full Jacobi sweeps before giving up.
pub const MAX_SWEEPS: usize = 100;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SpectralError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has a non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },
    #[error("matrix function is not finite at eigenvalue {0}")]
    NonFiniteFunction(f64),
    #[error("negative matrix power {0}")]
    NegativePower(i64),
}

/// Eigenvalues in ascending order; column `i` of `eigenvectors` pairs with
/// `eigenvalues[i]`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition<T> {
    pub eigenvalues: Vec<T>,
    pub eigenvectors: DenseMatrix<T>,
}

impl<T: Scalar> EigenDecomposition<T> {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector(&self, i: usize) -> Vec<T> {
        self.eigenvectors.column(i)
    }

    /// `V·diag(f(λ))·Vᵀ`, symmetrized.
    pub fn apply(&self, f: impl Fn(T) -> T) -> Result<DenseMatrix<T>, SpectralError> {
        let n = self.n();
        let fl: Vec<T> = self
            .eigenvalues
            .iter()
            .map(|&l| {
                let v = f(l);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(SpectralError::NonFiniteFunction(l.as_f64()))
                }
            })
            .collect::<Result<_, _>>()?;
        let v = &self.eigenvectors;
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut s = T::zero();
                for (k, &fk) in fl.iter().enumerate() {
                    s += v[(i, k)] * fk * v[(j, k)];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        Ok(out)
    }

    pub fn reconstruct(&self) -> DenseMatrix<T> {
        self.apply(|l| l).expect("identity is finite on finite eigenvalues")
    }
}

/// Eigendecomposition of a symmetric matrix. The input is symmetrized as
/// `(M + Mᵀ)/2` first. Eigenvalues come back ascending and each eigenvector
/// is signed so that its largest-magnitude entry (first one on ties) is
/// positive.
pub fn symmetric_eig<T: Scalar>(m: &DenseMatrix<T>) -> Result<EigenDecomposition<T>, SpectralError> {
    if !m.is_square() {
        return Err(SpectralError::NotSquare { rows: m.rows(), cols: m.cols() });
    }
    let n = m.rows();
    for i in 0..n {
        for j in 0..n {
            if !m[(i, j)].is_finite() {
                return Err(SpectralError::NonFinite(i, j));
            }
        }
    }
    let mut a = m.clone();
    a.symmetrize();
    let mut v = DenseMatrix::<T>::identity(n);

    let tol = T::of(1e-12).max(T::epsilon()) * a.frobenius_norm();
    let mut converged = false;
    let mut off = off_diagonal_norm(&a);
    for _ in 0..MAX_SWEEPS {
        if off <= tol || off == T::zero() {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
        off = off_diagonal_norm(&a);
    }
    if !converged && !(off <= tol) {
        return Err(SpectralError::NoConvergence { sweeps: MAX_SWEEPS, off_norm: off.as_f64() });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag = a.diagonal();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).expect("finite eigenvalues").then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| diag[i]).collect();
    let mut eigenvectors = DenseMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            eigenvectors[(row, col)] = v[(row, src)];
        }
    }
    canonicalize_signs(&mut eigenvectors);
    Ok(EigenDecomposition { eigenvalues, eigenvectors })
}

fn off_diagonal_norm<T: Scalar>(a: &DenseMatrix<T>) -> T {
    let n = a.rows();
    let mut s = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating `a[p][q]`, accumulated into `v`.
fn rotate<T: Scalar>(a: &mut DenseMatrix<T>, v: &mut DenseMatrix<T>, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == T::zero() {
        return;
    }
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    let two = T::of(2.0);
    let theta = (aqq - app) / (two * apq);
    let t = if theta.is_infinite() {
        T::zero()
    } else {
        let sign = if theta >= T::zero() { T::one() } else { -T::one() };
        sign / (theta.abs() + (T::one() + theta * theta).sqrt())
    };
    if t == T::zero() {
        a[(p, q)] = T::zero();
        a[(q, p)] = T::zero();
        return;
    }
    let c = T::one() / (T::one() + t * t).sqrt();
    let s = t * c;
    let n = a.rows();
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        a[(k, p)] = new_kp;
        a[(p, k)] = new_kp;
        a[(k, q)] = new_kq;
        a[(q, k)] = new_kq;
    }
    a[(p, p)] = app - t * apq;
    a[(q, q)] = aqq + t * apq;
    a[(p, q)] = T::zero();
    a[(q, p)] = T::zero();
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Flips each column so its largest-magnitude entry is positive. Entries
/// within a relative `sqrt(eps)` of the maximum count as ties and the first
/// one wins.
fn canonicalize_signs<T: Scalar>(v: &mut DenseMatrix<T>) {
    let n = v.rows();
    let tie = T::epsilon().sqrt();
    for col in 0..v.cols() {
        let max = (0..n).fold(T::zero(), |m, r| m.max(v[(r, col)].abs()));
        if max == T::zero() {
            continue;
        }
        let lead = (0..n).find(|&r| v[(r, col)].abs() >= max * (T::one() - tie)).expect("maximum is attained");
        if v[(lead, col)] < T::zero() {
            for r in 0..n {
                v[(r, col)] = -v[(r, col)];
            }
        }
    }
}

/// `f(M)` for symmetric `M` via its eigendecomposition.
pub fn matrix_function<T: Scalar>(m: &DenseMatrix<T>, f: impl Fn(T) -> T) -> Result<DenseMatrix<T>, SpectralError> {
    symmetric_eig(m)?.apply(f)
}

/// `M^p` by binary exponentiation. `p = 0` gives the identity.
pub fn matrix_power<T: Scalar>(m: &DenseMatrix<T>, p: i64) -> Result<DenseMatrix<T>, SpectralError> {
    if !m.is_square() {
        return Err(SpectralError::NotSquare { rows: m.rows(), cols: m.cols() });
    }
    if p < 0 {
        return Err(SpectralError::NegativePower(p));
    }
    let mut result: Option<DenseMatrix<T>> = None;
    let mut base = m.clone();
    let mut e = p as u64;
    while e > 0 {
        if e & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => r.matmul(&base).expect("square"),
            });
        }
        e >>= 1;
        if e > 0 {
            base = base.matmul(&base).expect("square");
        }
    }
    Ok(result.unwrap_or_else(|| DenseMatrix::identity(m.rows())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> DenseMatrix<f64> {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_spectrum() {
        let e = symmetric_eig(&DenseMatrix::<f64>::identity(3)).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn two_by_two_laplacian() {
        let e = symmetric_eig(&m(&[&[1.0, -1.0], &[-1.0, 1.0]])).unwrap();
        assert!(e.eigenvalues[0].abs() < 1e-14);
        assert!((e.eigenvalues[1] - 2.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let u0 = e.eigenvector(0);
        let u1 = e.eigenvector(1);
        assert!((u0[0] - h).abs() < 1e-14 && (u0[1] - h).abs() < 1e-14);
        assert!((u1[0] - h).abs() < 1e-14 && (u1[1] + h).abs() < 1e-14);
    }

    #[test]
    fn diagonal_sorted() {
        let e = symmetric_eig(&DenseMatrix::from_diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(symmetric_eig(&DenseMatrix::<f64>::zeros(2, 3)), Err(SpectralError::NotSquare { .. })));
        let bad = m(&[&[1.0, f64::NAN], &[f64::NAN, 1.0]]);
        assert_eq!(symmetric_eig(&bad).unwrap_err(), SpectralError::NonFinite(0, 1));
        let l = m(&[&[1.0, -1.0], &[-1.0, 1.0]]);
        assert!(matches!(matrix_function(&l, |x| 1.0 / x), Err(SpectralError::NonFiniteFunction(_))));
        assert_eq!(matrix_power(&l, -1).unwrap_err(), SpectralError::NegativePower(-1));
    }

    #[test]
    fn matrix_function_examples() {
        let l = m(&[&[1.0, -1.0], &[-1.0, 1.0]]);
        assert!(matrix_function(&l, |x| x).unwrap().max_abs_diff(&l).unwrap() < 1e-10);
        // closed form through the 2x2 eigenbasis
        let e2 = (-2.0f64).exp();
        let expect = m(&[&[(1.0 + e2) / 2.0, (1.0 - e2) / 2.0], &[(1.0 - e2) / 2.0, (1.0 + e2) / 2.0]]);
        let k = matrix_function(&l, |x| (-x).exp()).unwrap();
        assert!(k.max_abs_diff(&expect).unwrap() < 1e-14);
        assert!((k[(0, 0)] - 0.5677).abs() < 1e-4 && (k[(0, 1)] - 0.4323).abs() < 1e-4);
        assert_eq!(matrix_function(&l, |_| 0.0).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn matrix_power_examples() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matrix_power(&a, 1).unwrap(), a);
        assert_eq!(matrix_power(&a, 0).unwrap(), DenseMatrix::identity(2));
        let proj = m(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert_eq!(matrix_power(&proj, 2).unwrap(), proj);
        assert_eq!(matrix_power(&DenseMatrix::from_diag(&[2.0, 3.0]), 3).unwrap(), DenseMatrix::from_diag(&[8.0, 27.0]));
    }

    #[test]
    fn zero_matrix_converges() {
        let e = symmetric_eig(&DenseMatrix::<f64>::zeros(4, 4)).unwrap();
        assert!(e.eigenvalues.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn works_in_single_precision() {
        let l = DenseMatrix::<f32>::from_rows(&[[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]]).unwrap();
        let e = symmetric_eig(&l).unwrap();
        let expect = [2.0 - 2f32.sqrt(), 2.0, 2.0 + 2f32.sqrt()];
        for (a, b) in e.eigenvalues.iter().zip(expect) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
