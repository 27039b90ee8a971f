//! Banded LU factorization without pivoting.

use crate::error::MincoError;

/// Square banded matrix stored row by row over its band.
#[derive(Clone, Debug)]
pub struct BandedSystem {
    n: usize,
    lower: usize,
    upper: usize,
    band: Vec<f64>,
}

impl BandedSystem {
    pub fn new(n: usize, lower: usize, upper: usize) -> Self {
        Self { n, lower, upper, band: vec![0.0; n * (lower + upper + 1)] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.lower >= i && j <= i + self.upper, "({i}, {j}) outside band");
        i * (self.lower + self.upper + 1) + (j + self.lower - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.band[self.slot(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.band[s] = v;
    }

    /// In-place LU; the unit lower factor overwrites the sub-diagonal band.
    pub fn factorize(&mut self) -> Result<(), MincoError> {
        let n = self.n;
        for k in 0..n {
            let pivot = self.get(k, k);
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(MincoError::Singular(k));
            }
            let i_max = (k + self.lower).min(n - 1);
            let j_max = (k + self.upper).min(n - 1);
            for i in k + 1..=i_max {
                let l = self.get(i, k);
                if l != 0.0 {
                    self.set(i, k, l / pivot);
                }
            }
            for j in k + 1..=j_max {
                let u = self.get(k, j);
                if u == 0.0 {
                    continue;
                }
                for i in k + 1..=i_max {
                    let l = self.get(i, k);
                    if l != 0.0 {
                        let s = self.slot(i, j);
                        self.band[s] -= l * u;
                    }
                }
            }
        }
        Ok(())
    }

    /// Solves `A x = b` for each column of `b` (after [`factorize`](Self::factorize)).
    pub fn solve<const D: usize>(&self, b: &mut [[f64; D]]) {
        let n = self.n;
        for j in 0..n {
            let i_max = (j + self.lower).min(n - 1);
            for i in j + 1..=i_max {
                let l = self.get(i, j);
                if l != 0.0 {
                    for d in 0..D {
                        b[i][d] -= l * b[j][d];
                    }
                }
            }
        }
        for j in (0..n).rev() {
            let pivot = self.get(j, j);
            for d in 0..D {
                b[j][d] /= pivot;
            }
            let i_min = j.saturating_sub(self.upper);
            for i in i_min..j {
                let u = self.get(i, j);
                if u != 0.0 {
                    for d in 0..D {
                        b[i][d] -= u * b[j][d];
                    }
                }
            }
        }
    }

    /// Solves `A^T x = b` (after [`factorize`](Self::factorize)).
    pub fn solve_transposed<const D: usize>(&self, b: &mut [[f64; D]]) {
        let n = self.n;
        for j in 0..n {
            let pivot = self.get(j, j);
            for d in 0..D {
                b[j][d] /= pivot;
            }
            let i_max = (j + self.upper).min(n - 1);
            for i in j + 1..=i_max {
                let u = self.get(j, i);
                if u != 0.0 {
                    for d in 0..D {
                        b[i][d] -= u * b[j][d];
                    }
                }
            }
        }
        for j in (0..n).rev() {
            let i_min = j.saturating_sub(self.lower);
            for i in i_min..j {
                let l = self.get(j, i);
                if l != 0.0 {
                    for d in 0..D {
                        b[i][d] -= l * b[j][d];
                    }
                }
            }
        }
    }
}
