//! Banded LU with partial pivoting.

use crate::error::{Error, Result};

/// Square matrix with `kl` sub- and `ku` super-diagonals. Row `r` stores columns
/// `r − kl ..= r + ku + kl`; the extra `kl` slots take pivoting fill-in.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn identity(n: usize, kl: usize, ku: usize) -> Self {
        let mut m = Self::zeros(n, kl, ku);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn slot(&self, r: usize, c: usize) -> Option<usize> {
        let off = c as isize - r as isize + self.kl as isize;
        (off >= 0 && (off as usize) < self.width && c < self.n).then(|| r * self.width + off as usize)
    }

    pub fn in_band(&self, r: usize, c: usize) -> bool {
        c + self.kl >= r && c <= r + self.ku && c < self.n
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.slot(r, c).map_or(0.0, |s| self.data[s])
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        assert!(self.in_band(r, c), "({r}, {c}) outside the band");
        let s = self.slot(r, c).unwrap();
        self.data[s] = v;
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        assert!(self.in_band(r, c), "({r}, {c}) outside the band");
        let s = self.slot(r, c).unwrap();
        self.data[s] += v;
    }

    /// `self ← a·self + b·I`
    pub fn scale_shift(&mut self, a: f64, b: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
        for i in 0..self.n {
            self.add(i, i, b);
        }
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let lo = r.saturating_sub(self.kl);
            let hi = (r + self.ku).min(self.n - 1);
            let mut acc = 0.0;
            for c in lo..=hi {
                acc += self.get(r, c) * x[c];
            }
            y[r] = acc;
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|r| (0..self.n).map(|c| self.get(r, c)).collect()).collect()
    }

    pub fn factor(&self) -> Result<BandLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut a = self.clone();
        let mut piv = vec![0usize; n];
        let reach = ku + kl;
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = a.get(k, k).abs();
            for r in k + 1..=last {
                let v = a.get(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > 0.0) || !best.is_finite() {
                return Err(Error::Configuration(format!("singular banded matrix at column {k}")));
            }
            piv[k] = p;
            let cend = (k + reach).min(n - 1);
            if p != k {
                for c in k..=cend {
                    let (x, y) = (a.get(k, c), a.get(p, c));
                    let s = a.slot(k, c).unwrap();
                    a.data[s] = y;
                    if let Some(s) = a.slot(p, c) {
                        a.data[s] = x;
                    } else {
                        debug_assert!(x == 0.0);
                    }
                }
            }
            let d = a.get(k, k);
            for r in k + 1..=last {
                let s_rk = a.slot(r, k).unwrap();
                let l = a.data[s_rk] / d;
                a.data[s_rk] = l;
                if l != 0.0 {
                    for c in k + 1..=cend {
                        let u = a.get(k, c);
                        if u != 0.0 {
                            let s = a.slot(r, c).expect("fill stays in band");
                            a.data[s] -= l * u;
                        }
                    }
                }
            }
        }
        Ok(BandLu { lu: a, piv })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    lu: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.lu;
        let n = a.n;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let last = (k + a.kl).min(n - 1);
            let bk = b[k];
            if bk != 0.0 {
                for r in k + 1..=last {
                    b[r] -= a.get(r, k) * bk;
                }
            }
        }
        let reach = a.kl + a.ku;
        for k in (0..n).rev() {
            let cend = (k + reach).min(n - 1);
            let mut acc = b[k];
            for c in k + 1..=cend {
                acc -= a.get(k, c) * b[c];
            }
            b[k] = acc / a.get(k, k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn sample(n: usize, kl: usize, ku: usize, seed: u64) -> BandMatrix {
        let mut m = BandMatrix::zeros(n, kl, ku);
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for r in 0..n {
            for c in r.saturating_sub(kl)..=(r + ku).min(n - 1) {
                // weak diagonal so pivoting actually happens
                m.set(r, c, next() + if r == c { 0.01 } else { 0.0 });
            }
        }
        m
    }

    #[test]
    fn matches_dense_solve() {
        for (n, kl, ku) in [(1, 0, 0), (7, 2, 3), (40, 4, 4), (33, 5, 1)] {
            let m = sample(n, kl, ku, n as u64 + 17);
            let dense = DMatrix::from_fn(n, n, |r, c| m.get(r, c));
            let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let expect = dense.clone().lu().solve(&DVector::from_vec(b.clone())).unwrap();
            let mut x = b.clone();
            m.factor().unwrap().solve_in_place(&mut x);
            for i in 0..n {
                assert!((x[i] - expect[i]).abs() < 1e-9 * expect.amax().max(1.0), "n={n} i={i}");
            }
        }
    }

    #[test]
    fn singular_is_reported() {
        let m = BandMatrix::zeros(4, 1, 1);
        assert!(m.factor().is_err());
    }
}
