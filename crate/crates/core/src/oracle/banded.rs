//! Banded LU without pivoting, for the diagonally dominant matrices of the
//! finite-difference oracle.

use crate::error::{IsrError, Result};

/// Square matrix with `bw` sub- and super-diagonals, stored row-wise.
#[derive(Debug, Clone)]
pub(crate) struct Banded {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Banded {
    pub(crate) fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (2 * bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.bw >= i && j <= i + self.bw);
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    pub(crate) fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// In-place LU factorization; the unit-lower factor overwrites the
    /// sub-diagonals.
    pub(crate) fn factor(mut self) -> Result<Self> {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let piv = self.data[self.idx(k, k)];
            if piv.abs() < 1e-300 || !piv.is_finite() {
                return Err(IsrError::Oracle("singular finite-difference matrix".into()));
            }
            let last = (k + bw).min(n - 1);
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let l = self.data[ik] / piv;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                for j in k + 1..=last {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Ok(self)
    }

    /// Solves `LU x = b` in place, for a factored matrix.
    pub(crate) fn solve(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = b[i];
            for j in lo..i {
                s -= self.data[self.idx(i, j)] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=hi {
                s -= self.data[self.idx(i, j)] * b[j];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal() {
        let n = 6;
        let mut m = Banded::zeros(n, 1);
        for i in 0..n {
            m.add(i, i, 4.0);
            if i > 0 {
                m.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                m.add(i, i + 1, -2.0);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| i as f64 - 2.5).collect();
        let mut b: Vec<f64> = (0..n)
            .map(|i| {
                4.0 * x[i] - if i > 0 { x[i - 1] } else { 0.0 } - if i + 1 < n { 2.0 * x[i + 1] } else { 0.0 }
            })
            .collect();
        m.factor().unwrap().solve(&mut b);
        for (a, e) in b.iter().zip(&x) {
            assert!((a - e).abs() < 1e-13);
        }
    }
}
