//! Minimal dense linear algebra used by the solver and the rank metric.
//!
//! Matrices here are small (at most a few hundred rows), so a plain row-major
//! `Vec<f64>` with partial-pivot elimination is all that is needed.

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, a: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.a[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.cols..(i + 1) * self.cols]
    }

    /// `self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    ///
    /// Returns `None` when a pivot smaller than `tol` is encountered.
    pub fn inverse(&self, tol: f64) -> Option<Matrix> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut work = self.clone();
        let mut inv = Matrix::identity(n);
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&a, &b| {
                    work.get(a, col).abs().total_cmp(&work.get(b, col).abs())
                })
                .unwrap();
            if work.get(pivot_row, col).abs() < tol {
                return None;
            }
            if pivot_row != col {
                swap_rows(&mut work, pivot_row, col);
                swap_rows(&mut inv, pivot_row, col);
            }
            let pivot = work.get(col, col);
            for j in 0..n {
                work.a[col * n + j] /= pivot;
                inv.a[col * n + j] /= pivot;
            }
            for i in 0..n {
                if i == col {
                    continue;
                }
                let factor = work.get(i, col);
                if factor == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let w = work.get(col, j);
                    let v = inv.get(col, j);
                    work.a[i * n + j] -= factor * w;
                    inv.a[i * n + j] -= factor * v;
                }
            }
        }
        Some(inv)
    }
}

fn swap_rows(m: &mut Matrix, a: usize, b: usize) {
    if a == b {
        return;
    }
    let n = m.cols;
    for j in 0..n {
        m.a.swap(a * n + j, b * n + j);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// LU factorization with partial pivoting, for repeated solves against one
/// symmetric positive-definite (after regularization) matrix.
#[derive(Debug, Clone)]
pub struct LuFactors {
    lu: Matrix,
    perm: Vec<usize>,
}

impl LuFactors {
    /// Factors `m`; returns `None` if `m` is numerically singular.
    pub fn factor(m: &Matrix, tol: f64) -> Option<LuFactors> {
        assert_eq!(m.rows, m.cols);
        let n = m.rows;
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&a, &b| lu.get(a, col).abs().total_cmp(&lu.get(b, col).abs()))
                .unwrap();
            if lu.get(pivot_row, col).abs() < tol {
                return None;
            }
            if pivot_row != col {
                swap_rows(&mut lu, pivot_row, col);
                perm.swap(pivot_row, col);
            }
            let pivot = lu.get(col, col);
            for i in col + 1..n {
                let factor = lu.get(i, col) / pivot;
                lu.set(i, col, factor);
                for j in col + 1..n {
                    let v = lu.get(col, j);
                    lu.a[i * n + j] -= factor * v;
                }
            }
        }
        Some(LuFactors { lu, perm })
    }

    /// Solves `m x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows;
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            for j in 0..i {
                x[i] -= self.lu.get(i, j) * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu.get(i, j) * x[j];
            }
            x[i] /= self.lu.get(i, i);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn inverse_recovers_identity() {
        let m = Matrix { rows: 3, cols: 3, a: vec![4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0] };
        let inv = m.inverse(1e-12).unwrap();
        for i in 0..3 {
            let e: Vec<f64> = (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect();
            let x = inv.mul_vec(&m.mul_vec(&e));
            for j in 0..3 {
                assert_abs_diff_eq!(x[j], e[j], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = Matrix { rows: 2, cols: 2, a: vec![1.0, 2.0, 2.0, 4.0] };
        assert!(m.inverse(1e-10).is_none());
        assert!(LuFactors::factor(&m, 1e-10).is_none());
    }

    #[test]
    fn lu_solve_matches_direct_inverse() {
        let m = Matrix {
            rows: 4,
            cols: 4,
            a: vec![
                5.0, 1.0, 0.5, 0.0, //
                1.0, 4.0, 1.0, 0.2, //
                0.5, 1.0, 3.0, 0.7, //
                0.0, 0.2, 0.7, 2.0,
            ],
        };
        let lu = LuFactors::factor(&m, 1e-12).unwrap();
        let b = vec![1.0, -2.0, 0.5, 3.0];
        let x = lu.solve(&b);
        let back = m.mul_vec(&x);
        for i in 0..4 {
            assert_abs_diff_eq!(back[i], b[i], epsilon = 1e-9);
        }
    }
}
