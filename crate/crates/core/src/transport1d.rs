//! One-dimensional transport by quantile matching, the L2 comparison it is
//! contrasted with, and the sign-split variant for oscillatory signals.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::grid::{fmt17, parse_f64};

/// Samples on a uniform grid including both end points.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal1D {
    pub x_min: f64,
    pub x_max: f64,
    values: Vec<f64>,
}

impl Signal1D {
    pub fn new(x_min: f64, x_max: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 samples, got {}", values.len())));
        }
        if !(x_min.is_finite() && x_max.is_finite() && x_max > x_min) {
            return Err(Error::InvalidGrid(format!("bad interval [{x_min}, {x_max}]")));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite sample at index {k}")));
        }
        Ok(Signal1D { x_min, x_max, values })
    }

    pub fn from_fn(n: usize, x_min: f64, x_max: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let dx = (x_max - x_min) / (n.max(2) - 1) as f64;
        Self::new(x_min, x_max, (0..n).map(|k| f(x_min + k as f64 * dx)).collect())
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n() - 1) as f64
    }

    pub fn x(&self, k: usize) -> f64 {
        self.x_min + k as f64 * self.dx()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Signal1D {
        Signal1D { values: self.values.iter().map(|&v| f(v)).collect(), ..*self }
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx()
    }

    pub fn same_grid(&self, other: &Signal1D) -> bool {
        let tol = 1e-12 * self.dx();
        self.n() == other.n() && (self.x_min - other.x_min).abs() <= tol && (self.x_max - other.x_max).abs() <= tol
    }

    /// Positive and negative parts, both nonnegative.
    pub fn split_signs(&self) -> (Signal1D, Signal1D) {
        (self.map(|v| v.max(0.0)), self.map(|v| (-v).max(0.0)))
    }

    /// CSV with header `x,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,value")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", fmt17(self.x(k)), fmt17(*v))?;
        }
        Ok(())
    }

    /// Reads the format of [`Signal1D::write_csv`]; abscissae must be
    /// uniformly spaced.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = k + 1;
            let t = line.trim();
            if k == 0 {
                if t != "x,value" {
                    return Err(Error::Parse { line: 1, msg: format!("expected header \"x,value\", got {t:?}") });
                }
                continue;
            }
            if t.is_empty() {
                continue;
            }
            let mut it = t.split(',');
            let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Parse { line: lineno, msg: "expected two columns".into() });
            };
            xs.push(parse_f64(a.trim(), lineno)?);
            vs.push(parse_f64(b.trim(), lineno)?);
        }
        if xs.len() < 2 {
            return Err(Error::Parse { line: xs.len() + 1, msg: "need at least 2 samples".into() });
        }
        let n = xs.len();
        let dx = (xs[n - 1] - xs[0]) / (n - 1) as f64;
        for (k, x) in xs.iter().enumerate() {
            if (x - (xs[0] + k as f64 * dx)).abs() > 1e-9 * dx.abs().max(1e-300) {
                return Err(Error::Parse { line: k + 2, msg: "abscissae are not uniformly spaced".into() });
            }
        }
        Signal1D::new(xs[0], xs[n - 1], vs)
    }
}

/// Piecewise-linear CDF of a sample vector read as cell masses: sample
/// `k` spreads its mass uniformly over `[x_k - dx/2, x_k + dx/2]`.
struct Cdf {
    left: f64,
    dx: f64,
    cum: Vec<f64>,
}

impl Cdf {
    fn new(s: &Signal1D) -> Result<Self> {
        if let Some(k) = s.values().iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidParameter(format!("negative density at index {k}")));
        }
        let total: f64 = s.values().iter().sum();
        if !(total > 0.0) {
            return Err(Error::ZeroMass);
        }
        let mut acc = 0.0;
        let cum = s
            .values()
            .iter()
            .map(|v| {
                acc += v;
                acc / total
            })
            .collect();
        Ok(Cdf { left: s.x_min - 0.5 * s.dx(), dx: s.dx(), cum })
    }

    /// Quantiles at increasing levels `ts`, in one sweep.
    fn quantiles(&self, ts: impl Iterator<Item = f64>) -> Vec<f64> {
        let mut k = 0;
        let last = self.cum.len() - 1;
        ts.map(|t| {
            while k < last && self.cum[k] < t {
                k += 1;
            }
            let lo = if k == 0 { 0.0 } else { self.cum[k - 1] };
            let hi = self.cum[k];
            let frac = if hi > lo { ((t - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
            self.left + self.dx * (k as f64 + frac)
        })
        .collect()
    }
}

/// Squared Wasserstein distance between two nonnegative signals after
/// normalising each to unit mass, as `int_0^1 (F^-1 - G^-1)^2 dt` with a
/// midpoint rule on `10 max(n_f, n_g)` quantile levels.
pub fn w2_1d(f: &Signal1D, g: &Signal1D) -> Result<f64> {
    let cf = Cdf::new(f)?;
    let cg = Cdf::new(g)?;
    let m = 10 * f.n().max(g.n());
    let levels = || (0..m).map(move |k| (k as f64 + 0.5) / m as f64);
    let qf = cf.quantiles(levels());
    let qg = cg.quantiles(levels());
    let s: f64 = qf.iter().zip(&qg).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(s / m as f64)
}

/// `sum (f - g)^2 dx` on a shared grid.
pub fn l2_1d(f: &Signal1D, g: &Signal1D) -> Result<f64> {
    if !f.same_grid(g) {
        return Err(Error::GridMismatch);
    }
    let s: f64 = f.values().iter().zip(g.values()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(s * f.dx())
}

/// `W2^2(f+, g+) + W2^2(f-, g-)`, each part normalised separately. A part
/// absent from both signals contributes nothing.
pub fn signed_w2_1d(f: &Signal1D, g: &Signal1D) -> Result<f64> {
    let (fp, fm) = f.split_signs();
    let (gp, gm) = g.split_signs();
    let mut total = 0.0;
    for (a, b) in [(fp, gp), (fm, gm)] {
        match (a.mass() > 0.0, b.mass() > 0.0) {
            (true, true) => total += w2_1d(&a, &b)?,
            (false, false) => {}
            _ => return Err(Error::MassMismatchUnresolvable),
        }
    }
    Ok(total)
}
