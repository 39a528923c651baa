// Symmetric banded storage and an in-place Cholesky solve.

use alloc::vec::Vec;

/// Lower band of a symmetric matrix: `at(i, k)` is `A[i][i − k]`, `k ≤ bw`.
#[derive(Debug, Clone)]
pub(crate) struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix {
            n,
            bw,
            data: alloc::vec![0.0; n * (bw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, k: usize) -> usize {
        i * (self.bw + 1) + k
    }

    /// Adds `v` to `A[i][j]` (and its mirror); `|i − j|` must fit the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(r - c <= self.bw);
        let id = self.idx(r, r - c);
        self.data[id] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.bw {
            0.0
        } else {
            self.data[self.idx(r, r - c)]
        }
    }

    /// `y = A x`.
    #[cfg(test)]
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = alloc::vec![0.0; self.n];
        for i in 0..self.n {
            for k in 0..=self.bw.min(i) {
                let a = self.data[self.idx(i, k)];
                y[i] += a * x[i - k];
                if k > 0 {
                    y[i - k] += a * x[i];
                }
            }
        }
        y
    }

    /// Factorizes in place (`A = L Lᵀ`). Returns false when a pivot is not
    /// positive.
    pub fn cholesky(&mut self) -> bool {
        let bw = self.bw;
        for i in 0..self.n {
            let k0 = bw.min(i);
            // off-diagonal entries L[i][j], j = i − k, from the farthest in
            for k in (1..=k0).rev() {
                let j = i - k;
                let mut s = self.data[self.idx(i, k)];
                // Σ_{l < j, l ≥ i − bw} L[i][l] L[j][l]
                let lmin = i.saturating_sub(bw);
                for l in lmin..j {
                    if j - l > bw {
                        continue;
                    }
                    s -= self.data[self.idx(i, i - l)] * self.data[self.idx(j, j - l)];
                }
                let d = self.data[self.idx(j, 0)];
                let id = self.idx(i, k);
                self.data[id] = s / d;
            }
            let mut s = self.data[self.idx(i, 0)];
            for k in 1..=k0 {
                let v = self.data[self.idx(i, k)];
                s -= v * v;
            }
            if !(s > 0.0) || !s.is_finite() {
                return false;
            }
            let id = self.idx(i, 0);
            self.data[id] = crate::math::sqrt(s);
        }
        true
    }

    /// Solves `L Lᵀ x = b` after [`BandMatrix::cholesky`].
    pub fn solve_factored(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let bw = self.bw;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 1..=bw.min(i) {
                s -= self.data[self.idx(i, k)] * y[i - k];
            }
            y[i] = s / self.data[self.idx(i, 0)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in 1..=bw.min(n - 1 - i) {
                s -= self.data[self.idx(i + k, k)] * y[i + k];
            }
            y[i] = s / self.data[self.idx(i, 0)];
        }
        y
    }
}
