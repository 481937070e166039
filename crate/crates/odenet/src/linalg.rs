//! Dense row-major matrices and the handful of factorizations this crate
//! needs: LU with partial pivoting (determinant, solve, inverse), numerical
//! rank by row echelon reduction, Gram-Schmidt basis completion, and a
//! power-iteration condition estimate.
//!
//! Everything here is desk scale (matrices up to a few thousand rows).
//! Shape misuse panics; numerical failure modes (singularity, rank
//! deficiency) return [`crate::Error`].

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Mat {
        assert_eq!(data.len(), rows * cols, "Mat::from_vec length mismatch");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Mat {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "Mat::from_rows ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        let mut out = vec![0.0; self.rows];
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o = acc;
        }
        out
    }

    /// `Aᵀ x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "matvec_transpose dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            let row = self.row(i);
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self.get(i, k);
                if aik == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let out_row = out.row_mut(i);
                for (o, b) in out_row.iter_mut().zip(orow) {
                    *o += aik * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Mat::from_vec(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Mat::from_vec(self.rows, self.cols, data)
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat::from_vec(self.rows, self.cols, self.data.iter().map(|a| a * s).collect())
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    /// LU factorization with partial pivoting. Always completes; a
    /// numerically zero pivot marks the matrix singular for `solve`
    /// and `inverse`, while `det` simply returns ~0.
    pub fn lu(&self) -> Lu {
        assert_eq!(self.rows, self.cols, "lu requires a square matrix");
        let n = self.rows;
        let mut lu = self.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let mut p = k;
            let mut best = lu.get(k, k).abs();
            for i in k + 1..n {
                let v = lu.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu.get(k, j);
                    lu.set(k, j, lu.get(p, j));
                    lu.set(p, j, tmp);
                }
                piv.swap(k, p);
                sign = -sign;
            }
            let pivot = lu.get(k, k);
            if pivot == 0.0 {
                continue;
            }
            for i in k + 1..n {
                let factor = lu.get(i, k) / pivot;
                lu.set(i, k, factor);
                if factor != 0.0 {
                    for j in k + 1..n {
                        let v = lu.get(i, j) - factor * lu.get(k, j);
                        lu.set(i, j, v);
                    }
                }
            }
        }
        Lu { lu, piv, sign }
    }

    pub fn det(&self) -> f64 {
        self.lu().det()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.lu().solve(b)
    }

    pub fn inverse(&self) -> Result<Mat> {
        let n = self.rows;
        let lu = self.lu();
        let mut out = Mat::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = lu.solve(&e)?;
            e[j] = 0.0;
            for i in 0..n {
                out.set(i, j, col[i]);
            }
        }
        Ok(out)
    }

    /// Numerical rank by Gaussian elimination with partial pivoting;
    /// pivots at or below `threshold` (an absolute value) count as zero.
    pub fn rank(&self, threshold: f64) -> usize {
        let mut m = self.clone();
        let (rows, cols) = (m.rows, m.cols);
        let mut r = 0;
        for c in 0..cols {
            if r == rows {
                break;
            }
            let mut p = r;
            let mut best = m.get(r, c).abs();
            for i in r + 1..rows {
                let v = m.get(i, c).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= threshold {
                continue;
            }
            if p != r {
                for j in 0..cols {
                    let tmp = m.get(r, j);
                    m.set(r, j, m.get(p, j));
                    m.set(p, j, tmp);
                }
            }
            let pivot = m.get(r, c);
            for i in r + 1..rows {
                let factor = m.get(i, c) / pivot;
                if factor != 0.0 {
                    for j in c..cols {
                        let v = m.get(i, j) - factor * m.get(r, j);
                        m.set(i, j, v);
                    }
                }
            }
            r += 1;
        }
        r
    }
}

pub struct Lu {
    lu: Mat,
    piv: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn det(&self) -> f64 {
        let n = self.lu.rows();
        let mut d = self.sign;
        for i in 0..n {
            d *= self.lu.get(i, i);
        }
        d
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.lu.rows();
        assert_eq!(b.len(), n, "solve dimension mismatch");
        for i in 0..n {
            if self.lu.get(i, i) == 0.0 {
                return Err(Error::Singular(format!("zero pivot at column {i}")));
            }
        }
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu.get(i, j) * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu.get(i, j) * x[j];
            }
            x[i] = acc / self.lu.get(i, i);
        }
        Ok(x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Extend `rows` (assumed linearly independent vectors in ℝⁿ) by `append`
/// standard basis vectors, greedily choosing the one whose rejection from the
/// span built so far has the largest norm (ties broken by the lower index).
/// Returns only the appended vectors, in the order they were chosen.
pub fn complete_with_standard_basis(
    rows: &[&[f64]],
    n: usize,
    append: usize,
) -> Result<Vec<Vec<f64>>> {
    assert!(rows.len() + append <= n, "cannot exceed a basis of R^n");
    // Orthonormal basis of the running span.
    let mut onb: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (idx, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), n, "completion row length mismatch");
        let mut v = r.to_vec();
        for q in &onb {
            let c = dot(&v, q);
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= c * qi;
            }
        }
        let nv = norm(&v);
        if nv <= 1e-12 * norm(r).max(1.0) {
            return Err(Error::RankDeficient {
                what: format!("completion input row {idx}"),
                expected: rows.len(),
                got: idx,
            });
        }
        for vi in v.iter_mut() {
            *vi /= nv;
        }
        onb.push(v);
    }

    let target = rows.len() + append;
    let mut appended = Vec::with_capacity(append);
    while onb.len() < target {
        // Rejection norm of e_i from span(onb) is sqrt(1 - Σ_q q[i]²).
        let mut best_i = 0;
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            let proj: f64 = onb.iter().map(|q| q[i] * q[i]).sum();
            let rej = (1.0 - proj).max(0.0);
            if rej > best {
                best = rej;
                best_i = i;
            }
        }
        if best <= 1e-24 {
            return Err(Error::RankDeficient {
                what: "basis completion stalled".to_string(),
                expected: n,
                got: onb.len(),
            });
        }
        let mut e = vec![0.0; n];
        e[best_i] = 1.0;
        let mut v = e.clone();
        for q in &onb {
            let c = q[best_i];
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= c * qi;
            }
        }
        let nv = norm(&v);
        for vi in v.iter_mut() {
            *vi /= nv;
        }
        onb.push(v);
        appended.push(e);
    }
    Ok(appended)
}

/// m×n matrix with orthonormal rows (m ≤ n): Gram-Schmidt applied to rows of
/// standard normals, redrawing in the measure-zero event of dependence.
pub fn random_orthonormal_rows(rng: &mut crate::rng::Rng, m: usize, n: usize) -> Mat {
    assert!(m <= n, "orthonormal rows need m <= n");
    'redraw: loop {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
        for _ in 0..m {
            let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            for q in &rows {
                let c = dot(&v, q);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= c * qi;
                }
            }
            let nv = norm(&v);
            if nv < 1e-8 {
                continue 'redraw;
            }
            for vi in v.iter_mut() {
                *vi /= nv;
            }
            rows.push(v);
        }
        return Mat::from_rows(&rows);
    }
}

/// Estimate the 2-norm condition number of a square matrix via power
/// iteration on `BᵀB` (largest singular value) and on its inverse through LU
/// solves (smallest). Returns +inf for singular input.
pub fn cond_estimate(b: &Mat) -> f64 {
    assert_eq!(b.rows(), b.cols(), "cond_estimate requires square input");
    let n = b.rows();
    if n == 0 {
        return 1.0;
    }
    let lu = b.lu();
    if lu.det() == 0.0 {
        return f64::INFINITY;
    }
    let bt = b.transpose();
    let normalize = |v: &mut Vec<f64>| {
        let nv = norm(v);
        if nv > 0.0 {
            for x in v.iter_mut() {
                *x /= nv;
            }
        }
        nv
    };
    // sigma_max² from v ← BᵀB v.
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut smax2 = 0.0;
    for _ in 0..60 {
        let mut w = bt.matvec(&b.matvec(&v));
        smax2 = normalize(&mut w);
        v = w;
    }
    // sigma_min² from v ← (BᵀB)⁻¹ v, i.e. two triangular solves per step.
    let lut = bt.lu();
    let mut u = vec![1.0 / (n as f64).sqrt(); n];
    let mut inv_smin2 = 0.0;
    for _ in 0..60 {
        let w = match lut.solve(&u).and_then(|y| lu.solve(&y)) {
            Ok(w) => w,
            Err(_) => return f64::INFINITY,
        };
        let mut w = w;
        inv_smin2 = normalize(&mut w);
        u = w;
    }
    if inv_smin2 <= 0.0 {
        return f64::INFINITY;
    }
    (smax2 * inv_smin2).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_det_and_solve() {
        let a = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]);
        assert!((a.det() - 5.0).abs() < 1e-12);
        let x = a.solve(&[3.0, 5.0]).unwrap();
        // 2x + y = 3, x + 3y = 5 -> x = 4/5, y = 7/5
        assert!((x[0] - 0.8).abs() < 1e-12);
        assert!((x[1] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn inverse_roundtrip() {
        let a = Mat::from_rows(&[
            vec![4.0, -2.0, 1.0],
            vec![0.0, 3.0, -1.0],
            vec![2.0, 0.0, 5.0],
        ]);
        let ai = a.inverse().unwrap();
        let prod = a.matmul(&ai);
        let id = Mat::identity(3);
        assert!(prod.sub(&id).frobenius() < 1e-12);
    }

    #[test]
    fn singular_solve_errors() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(a.solve(&[1.0, 1.0]).is_err());
        assert_eq!(a.det(), 0.0);
    }

    #[test]
    fn rank_of_simple_matrices() {
        let id = Mat::identity(2);
        assert_eq!(id.rank(1e-12 * id.frobenius()), 2);
        let dep = Mat::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]);
        assert_eq!(dep.rank(1e-12 * dep.frobenius()), 1);
        let wide = Mat::from_rows(&[vec![1.0, 0.0, 0.0]]);
        assert_eq!(wide.rank(1e-12 * wide.frobenius()), 1);
        let zero = Mat::zeros(3, 3);
        assert_eq!(zero.rank(0.0), 0);
    }

    #[test]
    fn completion_spans_space() {
        let row = [1.0, 0.0];
        let appended = complete_with_standard_basis(&[&row], 2, 1).unwrap();
        assert_eq!(appended, vec![vec![0.0, 1.0]]);

        let row = [2.0, 3.0];
        let appended = complete_with_standard_basis(&[&row], 2, 1).unwrap();
        // e1 has the larger rejection from span{(2,3)}.
        assert_eq!(appended, vec![vec![1.0, 0.0]]);
        let full = Mat::from_rows(&[row.to_vec(), appended[0].clone()]);
        assert!(full.det().abs() > 1e-12);

        // partial extension in a larger space
        let row = [1.0, 0.0, 0.0, 0.0];
        let appended = complete_with_standard_basis(&[&row], 4, 2).unwrap();
        assert_eq!(appended.len(), 2);
        assert_eq!(appended[0], vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn cond_estimate_identity_and_scaled() {
        let id = Mat::identity(4);
        let c = cond_estimate(&id);
        assert!((c - 1.0).abs() < 1e-6, "cond(I) = {c}");
        let mut d = Mat::identity(3);
        d.set(0, 0, 1000.0);
        let c = cond_estimate(&d);
        assert!((c - 1000.0).abs() / 1000.0 < 1e-3, "cond = {c}");
    }
}
