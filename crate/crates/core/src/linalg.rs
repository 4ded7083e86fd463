//! Small dense symmetric positive-definite solves.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Mat;

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Mat<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn factor(a: &Mat<T>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Shape(format!("Cholesky needs a square matrix, got {:?}", a.shape())));
        }
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::Singular(format!("pivot {j} is {d}")));
            }
            let d = d.sqrt();
            l.set(j, j, d);
            for i in j + 1..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / d);
            }
        }
        Ok(Self { l })
    }

    pub fn lower(&self) -> &Mat<T> {
        &self.l
    }

    /// Solves `A x = b` for every column of `b` (`n x m`).
    pub fn solve(&self, b: &Mat<T>) -> Result<Mat<T>> {
        let n = self.l.rows();
        if b.rows() != n {
            return Err(Error::Shape(format!("rhs has {} rows, expected {n}", b.rows())));
        }
        let mut x = b.clone();
        for c in 0..b.cols() {
            // forward: L y = b
            for i in 0..n {
                let mut s = x.get(i, c);
                for k in 0..i {
                    s -= self.l.get(i, k) * x.get(k, c);
                }
                x.set(i, c, s / self.l.get(i, i));
            }
            // backward: L^T x = y
            for i in (0..n).rev() {
                let mut s = x.get(i, c);
                for k in i + 1..n {
                    s -= self.l.get(k, i) * x.get(k, c);
                }
                x.set(i, c, s / self.l.get(i, i));
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        let a = Mat::from_rows(&[vec![4.0f64, 2.0], vec![2.0, 3.0]]).unwrap();
        let b = Mat::from_rows(&[vec![2.0], vec![1.0]]).unwrap();
        let x = Cholesky::factor(&a).unwrap().solve(&b).unwrap();
        // 4x + 2y = 2, 2x + 3y = 1  ->  x = 0.5, y = 0
        assert!((x.get(0, 0) - 0.5).abs() < 1e-15);
        assert!(x.get(1, 0).abs() < 1e-15);
        let back = a.matmul(&x).unwrap();
        assert!(back.max_abs_diff(&b) < 1e-14);
    }

    #[test]
    fn rejects_indefinite() {
        let a = Mat::from_rows(&[vec![1.0f64, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(Cholesky::factor(&a), Err(Error::Singular(_))));
    }
}
