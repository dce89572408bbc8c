//! Banded LU with partial pivoting, column-major band storage.

/// A square matrix with `kl` sub- and `ku` super-diagonals, factorized in place.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    factored: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingularPivot {
    pub row: usize,
    pub value: f64,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        // fill from pivoting can widen the upper band by kl
        let ld = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ld,
            data: vec![0.0; ld * n],
            pivots: Vec::new(),
            factored: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        j * self.ld + (self.kl + self.ku + i - j)
    }

    /// Adds `v` at `(i, j)`; the entry must lie inside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            i <= j + self.kl && j <= i + self.ku,
            "({i}, {j}) outside the band"
        );
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i > j + self.kl || j > i + self.ku + self.kl {
            return 0.0;
        }
        self.data[self.slot(i, j)]
    }

    /// `y = A x`, valid before factorization.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert!(!self.factored);
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for (i, yi) in y.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *yi += self.data[self.slot(i, j)] * x[j];
            }
        }
        y
    }

    pub fn factor(&mut self) -> Result<(), SingularPivot> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut scale = 0.0f64;
        for v in &self.data {
            scale = scale.max(v.abs());
        }
        let floor = scale * f64::EPSILON * n as f64;
        self.pivots = vec![0; n];
        for k in 0..n {
            let imax = (k + kl).min(n - 1);
            let jmax = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for i in k + 1..=imax {
                let v = self.data[self.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > floor) {
                return Err(SingularPivot {
                    row: k,
                    value: best,
                });
            }
            self.pivots[k] = p;
            if p != k {
                for j in k..=jmax {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            for i in k + 1..=imax {
                let s = self.slot(i, k);
                self.data[s] /= pivot;
            }
            for j in k + 1..=jmax {
                let akj = self.data[self.slot(k, j)];
                if akj == 0.0 {
                    continue;
                }
                let col = j * self.ld + self.kl + self.ku;
                let lcol = k * self.ld + self.kl + self.ku;
                for i in k + 1..=imax {
                    let l = self.data[lcol + i - k];
                    self.data[col + i - j] -= l * akj;
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solves `A x = b` after [`factor`](Self::factor).
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert!(self.factored, "factor before solving");
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    x[i] -= self.data[self.slot(i, k)] * xk;
                }
            }
        }
        let reach = self.kl + self.ku;
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + reach).min(n - 1) {
                s -= self.data[self.slot(k, j)] * x[j];
            }
            x[k] = s / self.data[self.slot(k, k)];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n, kl, ku) in [(1, 0, 0), (7, 1, 1), (30, 4, 2), (40, 3, 7), (25, 24, 24)] {
            let mut band = BandMatrix::zeros(n, kl, ku);
            let mut dense = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    // weak diagonal so pivoting actually happens
                    let v = rng.gen_range(-1.0..1.0) + if i == j { 0.05 } else { 0.0 };
                    band.add(i, j, v);
                    dense[(i, j)] = v;
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert_eq!(
                band.mul_vec(&b),
                (&dense * DVector::from_vec(b.clone())).as_slice()
            );
            band.factor().unwrap();
            let x = band.solve(&b);
            let want = dense.lu().solve(&DVector::from_vec(b)).unwrap();
            for i in 0..n {
                assert!(
                    (x[i] - want[i]).abs() < 1e-8 * (1.0 + want[i].abs()),
                    "n={n} i={i}"
                );
            }
        }
    }

    #[test]
    fn singular_is_reported() {
        let mut band = BandMatrix::zeros(3, 1, 1);
        band.add(0, 0, 1.0);
        band.add(1, 0, 1.0);
        band.add(0, 1, 1.0);
        band.add(1, 1, 1.0);
        band.add(2, 2, 1.0);
        assert_eq!(band.factor().unwrap_err().row, 1);
    }
}
