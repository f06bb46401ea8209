//! Dense row-major matrices, sample covariances and the symmetric
//! positive-definite solve behind the chi-square statistic.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer does not match shape");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Contiguous block of rows `[start, end)`.
    pub fn row_block(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Column means, summed in row order.
    pub fn column_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += v;
            }
        }
        let n = self.rows as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    /// Sample covariance of the rows (denominator `rows - 1`).
    pub fn covariance(&self) -> Matrix {
        assert!(self.rows >= 2, "covariance needs at least two rows");
        let means = self.column_means();
        let p = self.cols;
        let mut cov = Matrix::zeros(p, p);
        let mut centred = vec![0.0; p];
        for i in 0..self.rows {
            for (c, (v, m)) in centred.iter_mut().zip(self.row(i).iter().zip(&means)) {
                *c = v - m;
            }
            for a in 0..p {
                let ca = centred[a];
                for b in a..p {
                    cov.data[a * p + b] += ca * centred[b];
                }
            }
        }
        let denom = (self.rows - 1) as f64;
        for a in 0..p {
            for b in a..p {
                let v = cov.data[a * p + b] / denom;
                cov.data[a * p + b] = v;
                cov.data[b * p + a] = v;
            }
        }
        cov
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Symmetric sub-matrix picking rows and columns in `order`.
    pub fn permuted(&self, order: &[usize]) -> Matrix {
        let p = order.len();
        let mut out = Matrix::zeros(p, p);
        for (a, &i) in order.iter().enumerate() {
            for (b, &j) in order.iter().enumerate() {
                out.data[a * p + b] = self.get(i, j);
            }
        }
        out
    }
}

/// Lower-triangular Cholesky factor of a symmetric matrix, or the index of the
/// first pivot that is not safely positive.
pub fn cholesky(a: &Matrix) -> Result<Matrix, usize> {
    let p = a.rows;
    let scale = (0..p).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale;
    let mut l = Matrix::zeros(p, p);
    for j in 0..p {
        let mut d = a.get(j, j);
        for t in 0..j {
            d -= l.get(j, t) * l.get(j, t);
        }
        if !(d > tol) || !d.is_finite() {
            return Err(j);
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in j + 1..p {
            let mut s = a.get(i, j);
            for t in 0..j {
                s -= l.get(i, t) * l.get(j, t);
            }
            l.set(i, j, s / djj);
        }
    }
    Ok(l)
}

/// `v^T A^{-1} v` given the Cholesky factor `L` of `A`.
pub fn quadratic_form(l: &Matrix, v: &[f64]) -> f64 {
    let p = l.rows;
    let mut z = vec![0.0; p];
    for i in 0..p {
        let mut s = v[i];
        for t in 0..i {
            s -= l.get(i, t) * z[t];
        }
        z[i] = s / l.get(i, i);
    }
    z.iter().map(|x| x * x).sum()
}

/// Sample variance with denominator `n - 1`.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn covariance_of_duplicated_columns() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![4.0, 4.0]]);
        let c = m.covariance();
        assert_relative_eq!(c.get(0, 0), sample_variance(&[1.0, 2.0, 4.0]));
        assert_eq!(c.get(0, 1), c.get(0, 0));
        assert_eq!(c.get(1, 0), c.get(1, 1));
    }

    #[test]
    fn cholesky_solves_known_system() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let l = cholesky(&a).unwrap();
        // A^{-1} = [[3, -2], [-2, 4]] / 8
        let v = [1.0, 2.0];
        let expected = (3.0 * 1.0 - 2.0 * 2.0 * 2.0 + 4.0 * 4.0) / 8.0;
        assert_relative_eq!(quadratic_form(&l, &v), expected, epsilon = 1e-14);
    }

    #[test]
    fn cholesky_reports_singular_pivot() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(cholesky(&a), Err(1));
        assert_eq!(cholesky(&Matrix::zeros(2, 2)), Err(0));
    }
}
