//! Small dense matrices (at most a handful of rows) for the limiting-covariance
//! and gap computations.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                write!(f, "{:>14.6e} ", self[(r, c)])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Mat {
            rows: r,
            cols: c,
            data: rows.iter().flat_map(|row| row.iter().copied()).collect(),
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Mat::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "dimension mismatch in matmul");
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out[(r, c)] += a * other[(k, c)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// Sub-matrix picking the given rows and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Mat {
        let mut out = Mat::zeros(rows.len(), cols.len());
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                out[(i, j)] = self[(r, c)];
            }
        }
        out
    }

    /// Places `block` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Mat) {
        for r in 0..block.rows {
            for c in 0..block.cols {
                self[(r0 + r, c0 + c)] = block[(r, c)];
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|r| {
                (0..r).all(|c| {
                    let scale = self[(r, c)].abs().max(self[(c, r)].abs()).max(1.0);
                    (self[(r, c)] - self[(c, r)]).abs() <= tol * scale
                })
            })
    }

    /// Determinant by LU with partial pivoting.
    pub fn det(&self) -> f64 {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.clone();
        let mut det = 1.0;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))
                .unwrap();
            if a[(p, k)] == 0.0 {
                return 0.0;
            }
            if p != k {
                a.swap_rows(p, k);
                det = -det;
            }
            let pivot = a[(k, k)];
            det *= pivot;
            for i in k + 1..n {
                let f = a[(i, k)] / pivot;
                for j in k..n {
                    let v = a[(k, j)];
                    a[(i, j)] -= f * v;
                }
            }
        }
        det
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        for c in 0..self.cols {
            self.data.swap(a * self.cols + c, b * self.cols + c);
        }
    }

    /// Inverse. Closed forms for 1x1, 2x2 and 3x3; Gauss-Jordan with partial
    /// pivoting otherwise.
    pub fn inverse(&self) -> Result<Mat> {
        if !self.is_square() {
            return Err(Error::InvalidArgument("inverse of a non-square matrix".into()));
        }
        let scale = self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let singular = || Error::Singular(format!("{}x{} matrix is not invertible", self.rows, self.cols));
        if scale == 0.0 {
            return Err(singular());
        }
        let n = self.rows;
        let det_tol = 1e-14 * scale.powi(n as i32);
        match n {
            1 => {
                if self[(0, 0)].abs() <= det_tol {
                    return Err(singular());
                }
                Ok(Mat::from_rows(&[&[1.0 / self[(0, 0)]]]))
            }
            2 => {
                let (a, b, c, d) = (self[(0, 0)], self[(0, 1)], self[(1, 0)], self[(1, 1)]);
                let det = a * d - b * c;
                if det.abs() <= det_tol {
                    return Err(singular());
                }
                Ok(Mat::from_rows(&[&[d / det, -b / det], &[-c / det, a / det]]))
            }
            3 => {
                let m = |r, c| self[(r, c)];
                let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m(r0, c0) * m(r1, c1) - m(r0, c1) * m(r1, c0);
                let c00 = cof(1, 2, 1, 2);
                let c01 = -cof(1, 2, 0, 2);
                let c02 = cof(1, 2, 0, 1);
                let det = m(0, 0) * c00 + m(0, 1) * c01 + m(0, 2) * c02;
                if det.abs() <= det_tol {
                    return Err(singular());
                }
                let adj = [
                    [c00, -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
                    [c01, cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
                    [c02, -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
                ];
                let mut inv = Mat::zeros(3, 3);
                for r in 0..3 {
                    for c in 0..3 {
                        inv[(r, c)] = adj[r][c] / det;
                    }
                }
                Ok(inv)
            }
            _ => self.gauss_jordan_inverse(scale),
        }
    }

    fn gauss_jordan_inverse(&self, scale: f64) -> Result<Mat> {
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Mat::identity(n);
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))
                .unwrap();
            if a[(p, k)].abs() <= 1e-14 * scale {
                return Err(Error::Singular(format!("{n}x{n} matrix is not invertible")));
            }
            a.swap_rows(p, k);
            inv.swap_rows(p, k);
            let pivot = a[(k, k)];
            for j in 0..n {
                a[(k, j)] /= pivot;
                inv[(k, j)] /= pivot;
            }
            for i in 0..n {
                if i == k {
                    continue;
                }
                let f = a[(i, k)];
                if f == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let (akj, ikj) = (a[(k, j)], inv[(k, j)]);
                    a[(i, j)] -= f * akj;
                    inv[(i, j)] -= f * ikj;
                }
            }
        }
        Ok(inv)
    }

    /// Cholesky factor; `None` unless the matrix is symmetric positive definite.
    pub fn cholesky(&self) -> Option<Mat> {
        if !self.is_symmetric(1e-10) {
            return None;
        }
        let n = self.rows;
        let mut l = Mat::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= 0.0 || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(l)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky().is_some()
    }

    /// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
    /// Returns eigenvalues in ascending order and the matching eigenvectors
    /// as columns.
    pub fn symmetric_eigen(&self) -> Result<(Vec<f64>, Mat)> {
        if !self.is_symmetric(1e-9) {
            return Err(Error::InvalidArgument("symmetric_eigen requires a symmetric matrix".into()));
        }
        let n = self.rows;
        let mut a = self.clone();
        // symmetrize exactly
        for r in 0..n {
            for c in 0..r {
                let v = 0.5 * (a[(r, c)] + a[(c, r)]);
                a[(r, c)] = v;
                a[(c, r)] = v;
            }
        }
        let mut v = Mat::identity(n);
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
                .map(|(r, c)| a[(r, c)] * a[(r, c)])
                .sum();
            let total: f64 = a.data.iter().map(|x| x * x).sum();
            if off <= 1e-30 * total.max(f64::MIN_POSITIVE) {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
        let values = order.iter().map(|&i| a[(i, i)]).collect();
        let vectors = v.select(&(0..n).collect::<Vec<_>>(), &order);
        Ok((values, vectors))
    }

    /// Symmetric inverse square root of a positive-definite matrix.
    pub fn inv_sqrt_spd(&self) -> Result<Mat> {
        let (values, vectors) = self.symmetric_eigen()?;
        if values.iter().any(|&l| l <= 0.0) {
            return Err(Error::Singular("matrix is not positive definite".into()));
        }
        let d = Mat::diag(&values.iter().map(|l| 1.0 / l.sqrt()).collect::<Vec<_>>());
        Ok(vectors.matmul(&d).matmul(&vectors.transpose()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_matches_identity_for_all_sizes() {
        let cases = [
            Mat::from_rows(&[&[4.0]]),
            Mat::from_rows(&[&[4.0, 1.0], &[2.0, 3.0]]),
            Mat::from_rows(&[&[4.0, 1.0, 0.5], &[1.0, 3.0, 0.2], &[0.5, 0.2, 2.0]]),
            Mat::from_rows(&[
                &[4.0, 1.0, 0.5, 0.1],
                &[1.0, 3.0, 0.2, 0.0],
                &[0.5, 0.2, 2.0, 0.3],
                &[0.1, 0.0, 0.3, 1.0],
            ]),
        ];
        for m in &cases {
            let inv = m.inverse().unwrap();
            let id = m.matmul(&inv);
            assert!(id.max_abs_diff(&Mat::identity(m.rows())) < 1e-12, "{id:?}");
        }
    }

    #[test]
    fn singular_inverse_is_rejected() {
        let m = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(matches!(m.inverse(), Err(Error::Singular(_))));
        let m = Mat::from_rows(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], &[0.0, 1.0, 1.0]]);
        assert!(matches!(m.inverse(), Err(Error::Singular(_))));
    }

    #[test]
    fn det_of_known_matrix() {
        let m = Mat::from_rows(&[&[2.0, 0.0, 1.0], &[1.0, 3.0, 2.0], &[1.0, 1.0, 1.0]]);
        // 2*(3-2) - 0 + 1*(1-3) = 0
        assert!(m.det().abs() < 1e-14);
        let m = Mat::from_rows(&[&[2.0, 1.0], &[1.0, 3.0]]);
        assert!((m.det() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn jacobi_eigen_reconstructs() {
        let m = Mat::from_rows(&[&[4.0, 1.0, 0.5], &[1.0, 3.0, 0.2], &[0.5, 0.2, 2.0]]);
        let (vals, vecs) = m.symmetric_eigen().unwrap();
        let rec = vecs.matmul(&Mat::diag(&vals)).matmul(&vecs.transpose());
        assert!(rec.max_abs_diff(&m) < 1e-12);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let s = m.inv_sqrt_spd().unwrap();
        let back = s.matmul(&m).matmul(&s);
        assert!(back.max_abs_diff(&Mat::identity(3)) < 1e-12);
    }

    #[test]
    fn cholesky_detects_indefinite() {
        assert!(Mat::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]).cholesky().is_none());
        assert!(Mat::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).is_positive_definite());
    }
}
