//! Cholesky factorization of symmetric positive-definite band matrices.

/// Lower band storage: `rows[i][k]` holds `A[i][i − k]` for `k ≤ bandwidth`.
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
            data: vec![0.0; n * (bw + 1)],
        }
    }

    fn at(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    /// Adds `v` to `A[i][j]` (and, implicitly, `A[j][i]`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.at(i, j);
        self.data[k] += v;
    }

    #[cfg(test)]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.at(i, j)]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.at(i, j);
        self.data[k] = v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[self.at(i, i)]).collect()
    }

    /// Replaces `A` by `S A S` with `S = diag(s)`.
    pub fn scale_symmetric(&mut self, s: &[f64]) {
        for i in 0..self.n {
            for j in i.saturating_sub(self.bw)..=i {
                let k = self.at(i, j);
                self.data[k] *= s[i] * s[j];
            }
        }
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let mut rows = vec![0.0; self.n];
        for i in 0..self.n {
            for j in i.saturating_sub(self.bw)..=i {
                let a = self.data[self.at(i, j)].abs();
                rows[i] += a;
                if j != i {
                    rows[j] += a;
                }
            }
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let a = self.data[self.at(i, j)];
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// In-place factorization `A = L Lᵀ`; `None` when a pivot is not positive.
    pub fn cholesky(&self) -> Option<BandCholesky> {
        let mut l = self.clone();
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = l.data[l.at(i, j)];
                let kmin = lo.max(j.saturating_sub(bw));
                for k in kmin..j {
                    s -= l.data[l.at(i, k)] * l.data[l.at(j, k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    let idx = l.at(i, i);
                    l.data[idx] = s.sqrt();
                } else {
                    let idx = l.at(i, j);
                    l.data[idx] = s / l.data[l.at(j, j)];
                }
            }
        }
        Some(BandCholesky { l })
    }
}

pub(crate) struct BandCholesky {
    l: BandMatrix,
}

impl BandCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.l;
        let n = l.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(l.bw);
            let mut s = y[i];
            for k in lo..i {
                s -= l.data[l.at(i, k)] * y[k];
            }
            y[i] = s / l.data[l.at(i, i)];
        }
        for i in (0..n).rev() {
            let hi = (i + l.bw).min(n - 1);
            let mut s = y[i];
            for k in i + 1..=hi {
                s -= l.data[l.at(k, i)] * y[k];
            }
            y[i] = s / l.data[l.at(i, i)];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal_laplacian() {
        let n = 20;
        let mut a = BandMatrix::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 2.0);
            if i + 1 < n {
                a.add(i + 1, i, -1.0);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul_vec(&x);
        let sol = a.cholesky().unwrap().solve(&b);
        for (s, e) in sol.iter().zip(&x) {
            assert!((s - e).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_scaling_and_norm() {
        let mut a = BandMatrix::zeros(3, 1);
        a.add(0, 0, 4.0);
        a.add(1, 1, 9.0);
        a.add(2, 2, 1.0);
        a.add(1, 0, -2.0);
        a.add(2, 1, 3.0);
        assert_eq!(a.norm_inf(), 14.0);
        a.scale_symmetric(&[0.5, 1.0 / 3.0, 1.0]);
        assert_eq!(a.diagonal(), vec![1.0, 1.0, 1.0]);
        assert!((a.get(0, 1) + 1.0 / 3.0).abs() < 1e-15);
        assert!((a.get(2, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wide_band_matches_dense() {
        let n = 12;
        let bw = 4;
        let mut a = BandMatrix::zeros(n, bw);
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let v = if i == j {
                    10.0
                } else {
                    ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.6
                };
                a.set(i, j, v);
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
        let x = a.cholesky().unwrap().solve(&b);
        let expected = dense.cholesky().unwrap().solve(&nalgebra::DVector::from_vec(b));
        for i in 0..n {
            assert!((x[i] - expected[i]).abs() < 1e-12);
        }
        assert_eq!(a.get(0, 5), 0.0);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = BandMatrix::zeros(2, 1);
        a.set(0, 0, 1.0);
        a.set(1, 1, 1.0);
        a.set(1, 0, 2.0);
        assert!(a.cholesky().is_none());
    }
}
