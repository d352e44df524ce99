//! Sparse matrices in triplet form and a direct solver for banded systems
//! carrying one dense trailing column.
//!
//! The Newton systems of the Monge-Ampère discretisation couple each node
//! to its 3x3 neighbourhood (a band of half-width about one grid row) plus
//! a single global unknown, the additive constant, which appears in every
//! interior equation. Ordering that unknown last keeps the LU factors
//! banded apart from that column.

use crate::error::{Error, Result};

/// Square sparse matrix as an unordered list of `(row, col, value)`.
/// Duplicate entries are summed.
#[derive(Clone, Debug, Default)]
pub struct TripletMatrix {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletMatrix {
    pub fn new(n: usize) -> Self {
        TripletMatrix { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        TripletMatrix { n, entries: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Structurally nonzero columns of `row`, duplicates merged.
    pub fn row(&self, row: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for &(r, c, v) in &self.entries {
            if r == row {
                match out.iter_mut().find(|(cc, _)| *cc == c) {
                    Some(e) => e.1 += v,
                    None => out.push((c, v)),
                }
            }
        }
        out.sort_by_key(|e| e.0);
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for &(r, c, v) in &self.entries {
            a[r][c] += v;
        }
        a
    }
}

/// LU factorisation with partial pivoting of a matrix whose leading
/// `n - 1` columns are banded and whose last column is dense.
pub struct BorderedBandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    band: Vec<f64>,
    border: Vec<f64>,
    pivots: Vec<usize>,
}

impl BorderedBandLu {
    pub fn factor(a: &TripletMatrix) -> Result<Self> {
        let n = a.dim();
        if n == 0 {
            return Err(Error::InvalidParameter("empty system".into()));
        }
        let last = n - 1;
        let (mut kl, mut ku) = (0usize, 0usize);
        for &(r, c, _) in a.entries() {
            if c == last {
                continue;
            }
            if r > c {
                kl = kl.max(r - c);
            } else {
                ku = ku.max(c - r);
            }
        }
        let width = 2 * kl + ku + 1;
        let mut lu = BorderedBandLu {
            n,
            kl,
            ku,
            width,
            band: vec![0.0; n * width],
            border: vec![0.0; n],
            pivots: vec![0; n],
        };
        let mut scale = 0.0f64;
        for &(r, c, v) in a.entries() {
            scale = scale.max(v.abs());
            if c == last {
                lu.border[r] += v;
            } else {
                let k = lu.slot(r, c);
                lu.band[k] += v;
            }
        }
        if !scale.is_finite() {
            return Err(Error::SingularSystem { pivot: 0 });
        }
        lu.eliminate(scale)?;
        Ok(lu)
    }

    #[inline]
    fn slot(&self, r: usize, c: usize) -> usize {
        debug_assert!(c + self.kl >= r && c + self.kl - r < self.width);
        r * self.width + (c + self.kl - r)
    }

    fn eliminate(&mut self, scale: f64) -> Result<()> {
        let n = self.n;
        let last = n - 1;
        let tiny = scale * 1e-15;
        for k in 0..last {
            let rmax = (k + self.kl).min(last);
            let mut p = k;
            let mut best = self.band[self.slot(k, k)].abs();
            for r in k + 1..=rmax {
                let v = self.band[self.slot(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > tiny) {
                return Err(Error::SingularSystem { pivot: k });
            }
            self.pivots[k] = p;
            let cmax = (k + self.kl + self.ku).min(last - 1);
            if p != k {
                for c in k..=cmax {
                    let (sk, sp) = (self.slot(k, c), self.slot(p, c));
                    self.band.swap(sk, sp);
                }
                self.border.swap(k, p);
            }
            let pivot = self.band[self.slot(k, k)];
            let len = cmax.saturating_sub(k);
            let w = self.width;
            let (head, tail) = self.band.split_at_mut((k + 1) * w);
            let src = &head[k * w + self.kl + 1..][..len];
            for r in k + 1..=rmax {
                let row = &mut tail[(r - k - 1) * w..][..w];
                let off = k + self.kl - r;
                let l = row[off] / pivot;
                row[off] = l;
                if l == 0.0 {
                    continue;
                }
                for (d, s) in row[off + 1..][..len].iter_mut().zip(src) {
                    *d -= l * s;
                }
                self.border[r] -= l * self.border[k];
            }
        }
        self.pivots[last] = last;
        if !(self.border[last].abs() > tiny) {
            return Err(Error::SingularSystem { pivot: last });
        }
        Ok(())
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let last = n - 1;
        let mut y = rhs.to_vec();
        for k in 0..last {
            y.swap(k, self.pivots[k]);
            let yk = y[k];
            if yk != 0.0 {
                for r in k + 1..=(k + self.kl).min(last) {
                    y[r] -= self.band[self.slot(r, k)] * yk;
                }
            }
        }
        let mut x = vec![0.0; n];
        x[last] = y[last] / self.border[last];
        for k in (0..last).rev() {
            let mut s = y[k] - self.border[k] * x[last];
            for c in k + 1..=(k + self.kl + self.ku).min(last - 1) {
                s -= self.band[self.slot(k, c)] * x[c];
            }
            x[k] = s / self.band[self.slot(k, k)];
        }
        x
    }
}
