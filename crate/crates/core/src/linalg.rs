//! Small dense and banded linear-algebra helpers.
//!
//! The trajectory optimizer only ever needs Jacobian blocks of a few rows and
//! a symmetric positive definite solve whose sparsity is a narrow band (each
//! residual touches one `(q_t, u_t, q_{t+1})` window), so a banded Cholesky
//! keeps the normal-equation solve linear in the horizon length.

use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Largest absolute entry-wise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("matrix is not positive definite (pivot {pivot} = {value})")]
pub struct NotPositiveDefinite {
    pub pivot: usize,
    pub value: f64,
}

/// Symmetric banded matrix, lower band stored row by row.
///
/// Entry `(i, j)` with `j <= i` and `i - j <= bandwidth` lives at
/// `data[i * (bandwidth + 1) + (i - j)]`.
#[derive(Clone, Debug)]
pub struct SymBand {
    n: usize,
    bandwidth: usize,
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            bandwidth,
            data: vec![0.0; n * (bandwidth + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bandwidth, "({i},{j}) outside band");
        i * (self.bandwidth + 1) + (i - j)
    }

    /// Reads a symmetric entry; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bandwidth {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `v` to the symmetric pair `(i, j)` / `(j, i)`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            let s = self.slot(i, i);
            self.data[s] += v;
        }
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.n).map(|i| self.data[self.slot(i, i)]).fold(0.0, f64::max)
    }

    /// In-place Cholesky factorisation `A = L Lᵀ`; the band keeps its width.
    pub fn cholesky(mut self) -> Result<BandCholesky, NotPositiveDefinite> {
        let bw = self.bandwidth;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = self.data[self.slot(i, j)];
                let kl = lo.max(j.saturating_sub(bw));
                for k in kl..j {
                    sum -= self.data[self.slot(i, k)] * self.data[self.slot(j, k)];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(NotPositiveDefinite { pivot: i, value: sum });
                    }
                    let s = self.slot(i, i);
                    self.data[s] = sum.sqrt();
                } else {
                    let s = self.slot(i, j);
                    self.data[s] = sum / self.data[self.slot(j, j)];
                }
            }
        }
        Ok(BandCholesky { factor: self })
    }
}

/// Lower-triangular band factor produced by [`SymBand::cholesky`].
#[derive(Clone, Debug)]
pub struct BandCholesky {
    factor: SymBand,
}

impl BandCholesky {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let l = &self.factor;
        let n = l.n;
        let bw = l.bandwidth;
        assert_eq!(rhs.len(), n);
        let mut y = rhs.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= l.data[l.slot(i, k)] * y[k];
            }
            y[i] = s / l.data[l.slot(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n.min(i + bw + 1) {
                s -= l.data[l.slot(k, i)] * y[k];
            }
            y[i] = s / l.data[l.slot(i, i)];
        }
        y
    }
}
