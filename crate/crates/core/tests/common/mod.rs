//! Test problems with independently computed answers.
#![allow(dead_code)]

use seiswass::grid::{Grid2D, GridField};
use seiswass::preprocess::{DensityPair, NodeRect};

/// `a + exp(-(x - m)^2 / (2 s^2))`: a Gaussian bump on a constant floor.
#[derive(Clone, Copy, Debug)]
pub struct Bump {
    pub a: f64,
    pub m: f64,
    pub s: f64,
}

impl Bump {
    pub fn eval(&self, x: f64) -> f64 {
        self.a + (-(x - self.m).powi(2) / (2.0 * self.s * self.s)).exp()
    }
}

/// Densities `f = p1(x1) p2(x2)` and `g = q1(y1) q2(y2)` on the unit
/// square. The optimal map is separable, so everything reduces to 1D.
#[derive(Clone, Copy, Debug)]
pub struct Separable {
    pub f: (Bump, Bump),
    pub g: (Bump, Bump),
}

pub const GAUSSIANS: Separable = Separable {
    f: (Bump { a: 0.3, m: 0.45, s: 0.1 }, Bump { a: 0.3, m: 0.5, s: 0.1 }),
    g: (Bump { a: 0.3, m: 0.55, s: 0.12 }, Bump { a: 0.3, m: 0.48, s: 0.12 }),
};

impl Separable {
    /// Pair sampled on an `n x n` grid over the unit square; both
    /// rectangles cover the whole grid, masses are normalised.
    pub fn pair(&self, n: usize) -> DensityPair {
        let grid = Grid2D::new(n, n, 0.0, 1.0, 0.0, 1.0).unwrap();
        let r = NodeRect::full(&grid);
        let (p, q) = (self.f, self.g);
        let f = GridField::from_fn(grid, |x, y| p.0.eval(x) * p.1.eval(y));
        let g = GridField::from_fn(grid, |x, y| q.0.eval(x) * q.1.eval(y));
        let (f, g) = (f.scale(1.0 / r.integrate(&f)), g.scale(1.0 / r.integrate(&g)));
        let theta = g.min();
        DensityPair::new(f, g, r, r, theta).unwrap()
    }

    pub fn axis_maps(&self) -> (Map1D, Map1D) {
        (Map1D::new(self.f.0, self.g.0), Map1D::new(self.f.1, self.g.1))
    }

    pub fn w2_squared(&self) -> f64 {
        let (a, b) = self.axis_maps();
        a.w2_squared() + b.w2_squared()
    }
}

/// Monotone rearrangement between two positive densities on `[0, 1]`,
/// from finely tabulated cumulative distributions.
pub struct Map1D {
    x: Vec<f64>,
    cf: Vec<f64>,
    cg: Vec<f64>,
    pf: Bump,
    pg: Bump,
    /// Total masses of `pf` and `pg` on `[0, 1]`.
    zf: f64,
    zg: f64,
}

const FINE: usize = 400_001;

fn cdf(p: Bump) -> (Vec<f64>, f64) {
    let h = 1.0 / (FINE - 1) as f64;
    let mut c = vec![0.0; FINE];
    for k in 1..FINE {
        c[k] = c[k - 1] + 0.5 * h * (p.eval((k - 1) as f64 * h) + p.eval(k as f64 * h));
    }
    let total = c[FINE - 1];
    c.iter_mut().for_each(|v| *v /= total);
    (c, total)
}

/// Inverse of a tabulated increasing function, by linear interpolation.
fn invert(x: &[f64], c: &[f64], t: f64) -> f64 {
    let k = c.partition_point(|&v| v < t).clamp(1, c.len() - 1);
    let w = (t - c[k - 1]) / (c[k] - c[k - 1]);
    x[k - 1] + w * (x[k] - x[k - 1])
}

impl Map1D {
    pub fn new(pf: Bump, pg: Bump) -> Self {
        let x = (0..FINE).map(|k| k as f64 / (FINE - 1) as f64).collect();
        let ((cf, zf), (cg, zg)) = (cdf(pf), cdf(pg));
        Map1D { x, cf, cg, pf, pg, zf, zg }
    }

    /// `T(x) = G^-1(F(x))`.
    pub fn map(&self, x: f64) -> f64 {
        let t = invert(&self.cf, &self.x, x);
        invert(&self.x, &self.cg, t)
    }

    /// `T'(x) = f(x) / g(T(x))`, with normalised densities.
    pub fn slope(&self, x: f64) -> f64 {
        (self.pf.eval(x) / self.zf) / (self.pg.eval(self.map(x)) / self.zg)
    }

    /// `int_0^1 |F^-1(t) - G^-1(t)|^2 dt` by the midpoint rule in `t`.
    pub fn w2_squared(&self) -> f64 {
        let m = 200_000;
        (0..m)
            .map(|k| {
                let t = (k as f64 + 0.5) / m as f64;
                (invert(&self.x, &self.cf, t) - invert(&self.x, &self.cg, t)).powi(2)
            })
            .sum::<f64>()
            / m as f64
    }
}

/// Compactly supported smooth bump `(1 - r^2/R^2)^3`.
pub fn bump2d(grid: Grid2D, c: (f64, f64), radius: f64) -> GridField {
    GridField::from_fn(grid, |x, y| {
        let r2 = ((x - c.0).powi(2) + (y - c.1).powi(2)) / (radius * radius);
        if r2 < 1.0 { (1.0 - r2).powi(3) } else { 0.0 }
    })
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seiswass::solver::{assemble_system, initial_potential, Potential, SolverConfig};

/// Random smooth field: a few low Fourier modes with random amplitudes.
fn smooth_noise(grid: &Grid2D, rng: &mut ChaCha8Rng, amp: f64) -> Vec<f64> {
    let modes: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| (rng.random_range(-amp..amp), rng.random_range(1.0..4.0), rng.random_range(1.0..4.0), rng.random_range(0.0..6.3)))
        .collect();
    let mut v = Vec::with_capacity(grid.len());
    for j in 0..grid.n2 {
        for i in 0..grid.n1 {
            let (x, y) = grid.position(i, j);
            v.push(modes.iter().map(|&(a, k1, k2, p)| a * (k1 * x + k2 * y + p).sin()).sum());
        }
    }
    v
}

/// Outcome of comparing the assembled Jacobian with central differences
/// of the residual along one random direction.
#[derive(Debug)]
pub struct JacobianCheck {
    /// Largest `|fd - J v|` over rows away from kinks, relative to `max |J v|`.
    pub max_rel_err: f64,
    /// Rows whose one-sided differences disagree, i.e. a branch switch
    /// lies within the step.
    pub kink_rows: usize,
    pub rows: usize,
}

/// Jacobian check at a random perturbation of the initial iterate.
pub fn jacobian_check(pair: &DensityPair, cfg: &SolverConfig, seed: u64) -> JacobianCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = initial_potential(pair, cfg).unwrap();
    let grid = *base.u.grid();
    let bump = smooth_noise(&grid, &mut rng, 0.01 * grid.dx.sqrt());
    let pin = grid.index(base.u0_node.0, base.u0_node.1);
    let vals: Vec<f64> = base.u.values().iter().zip(&bump).map(|(a, b)| a + b - bump[pin]).collect();
    let u = Potential { u: GridField::new(grid, vals).unwrap(), u0_node: base.u0_node, u0: rng.random_range(-0.1..0.1) };
    let mut dir = smooth_noise(&grid, &mut rng, 0.01);
    dir[pin] = 0.0;
    dir.push(rng.random_range(-0.01..0.01));

    let at = |t: f64| {
        let vals: Vec<f64> = u.u.values().iter().zip(&dir).map(|(a, d)| a + t * d).collect();
        let p = Potential { u: GridField::new(grid, vals).unwrap(), u0_node: u.u0_node, u0: u.u0 + t * dir[grid.len()] };
        assemble_system(&p, pair, cfg).unwrap().0
    };
    let (r0, jac) = assemble_system(&u, pair, cfg).unwrap();
    let jv = jac.mul_vec(&dir);
    // Central differences at h and h/2 agree to O(h^2) on smooth rows. A row
    // whose branch switches inside the bracket breaks that agreement.
    let h = 1e-5;
    let central = |h: f64| {
        let (rp, rm) = (at(h), at(-h));
        rp.iter().zip(&rm).map(|(p, m)| (p - m) / (2.0 * h)).collect::<Vec<_>>()
    };
    let (coarse, fine) = (central(h), central(h / 2.0));
    let scale = jv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = JacobianCheck { max_rel_err: 0.0, kink_rows: 0, rows: r0.len() };
    for k in 0..r0.len() {
        if (coarse[k] - fine[k]).abs() > 1e-6 * scale {
            out.kink_rows += 1;
            continue;
        }
        out.max_rel_err = out.max_rel_err.max((fine[k] - jv[k]).abs() / scale);
    }
    out
}
