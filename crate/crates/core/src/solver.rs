//! Monge-Ampère solver for the optimal transport problem between the two
//! densities of a [`DensityPair`].
//!
//! The potential `u` lives on the nodes of the source rectangle. Interior
//! nodes carry the compact monotone discretisation
//!
//! ```text
//! -min(MA1[u], MA2[u]) = 0
//! MA1 = max(D11,d) max(D22,d) + min(D11,d) + min(D22,d) - f / g(D1 u, D2 u) - u0
//! MA2 = the same along the two diagonals of the 3x3 stencil
//! ```
//!
//! where `d` is the second-derivative floor `delta`. Boundary nodes carry a
//! one-sided Neumann condition sending each side of the source rectangle
//! to the matching side of the target rectangle. The unknown constant `u0`
//! makes the Neumann problem uniquely solvable; the potential itself is
//! pinned to zero at a fixed node. The nonlinear system is solved by a
//! damped Newton iteration with a direct banded solver. Residuals use the
//! exact minimum; the Newton matrix blends the two branches near ties,
//! with a blending width that shrinks with the residual.
//!
//! The optional filtered scheme blends the monotone residual with a
//! centred second-order discretisation of `det(D^2 u) = f / g(grad u)`
//! (and second-order one-sided boundary conditions) through the bounded
//! filter [`filter`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, GridField};
use crate::linalg::{BorderedBandLu, TripletMatrix};
use crate::preprocess::{lipschitz_bound, DensityPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Monotone,
    Filtered,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Floor on second differences. `None` derives it from the data.
    pub delta: Option<f64>,
    /// Filter width. `None` uses `sqrt(dx)`.
    pub epsilon_filter: Option<f64>,
    /// Max-norm residual tolerance.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub use_filtered: bool,
    /// Pinned node in source-rectangle coordinates. `None` picks its centre.
    pub fixed_node: Option<(usize, usize)>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            delta: None,
            epsilon_filter: None,
            newton_tol: 1e-8,
            max_newton_iters: 30,
            use_filtered: false,
            fixed_node: None,
        }
    }
}

/// Smallest delta used when derived from the data.
pub const DELTA_FLOOR: f64 = 1e-3;

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0) {
            return Err(Error::InvalidParameter("newton_tol must be positive".into()));
        }
        if self.max_newton_iters == 0 {
            return Err(Error::InvalidParameter("max_newton_iters must be at least 1".into()));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return Err(Error::InvalidParameter("delta must be positive".into()));
            }
        }
        if let Some(e) = self.epsilon_filter {
            if !(e > 0.0) {
                return Err(Error::InvalidParameter("epsilon must be positive".into()));
            }
        }
        Ok(())
    }

    /// Delta from the monotonicity bound `K dx / 2`, capped at `dx` and
    /// floored at [`DELTA_FLOOR`].
    pub fn default_delta(pair: &DensityPair) -> f64 {
        let dx = pair.grid().dx;
        (1.01 * lipschitz_bound(pair) * dx / 2.0).min(dx).max(DELTA_FLOOR)
    }

    pub fn resolve(&self, pair: &DensityPair) -> Result<ResolvedConfig> {
        self.validate()?;
        let dx = pair.grid().dx;
        let (m1, m2) = (pair.x_rect.n1(), pair.x_rect.n2());
        let fixed = self.fixed_node.unwrap_or((m1 / 2, m2 / 2));
        if fixed.0 >= m1 || fixed.1 >= m2 {
            return Err(Error::InvalidParameter(format!("fixed node {fixed:?} outside the source rectangle")));
        }
        Ok(ResolvedConfig {
            delta: self.delta.unwrap_or_else(|| Self::default_delta(pair)),
            epsilon: self.epsilon_filter.unwrap_or_else(|| dx.sqrt()),
            scheme: if self.use_filtered { Scheme::Filtered } else { Scheme::Monotone },
            fixed,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolvedConfig {
    pub delta: f64,
    pub epsilon: f64,
    pub scheme: Scheme,
    pub fixed: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// Accepted damping factor of each Newton step.
    pub step_lengths: Vec<f64>,
    pub converged: bool,
    pub scheme: Scheme,
    pub delta: f64,
    pub epsilon: f64,
    /// Gradient evaluations that fell more than two cells outside the
    /// target rectangle at the final iterate.
    pub boundary_violations: usize,
}

/// Discrete potential on the source rectangle.
#[derive(Clone, Debug)]
pub struct Potential {
    /// Potential, zero at `u0_node`.
    pub u: GridField,
    pub u0_node: (usize, usize),
    /// The additive constant of the discrete equation.
    pub u0: f64,
}

impl Potential {
    /// Gradient of the potential by centred differences, second-order
    /// one-sided on the boundary.
    pub fn gradient(&self, i: usize, j: usize) -> (f64, f64) {
        let g = self.u.grid();
        let d1 = derivative(|k| self.u.get(k, j), i, g.n1, g.dx);
        let d2 = derivative(|k| self.u.get(i, k), j, g.n2, g.dx);
        (d1, d2)
    }
}

fn derivative(v: impl Fn(usize) -> f64, k: usize, n: usize, dx: f64) -> f64 {
    if n < 3 {
        return (v(n - 1) - v(0)) / (dx * (n - 1) as f64);
    }
    if k == 0 {
        (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * dx)
    } else if k + 1 == n {
        (3.0 * v(k) - 4.0 * v(k - 1) + v(k - 2)) / (2.0 * dx)
    } else {
        (v(k + 1) - v(k - 1)) / (2.0 * dx)
    }
}

/// The bounded filter: identity on `[-1, 1]`, zero outside `[-2, 2]`,
/// linear in between.
pub fn filter(x: f64) -> f64 {
    let a = x.abs();
    if a <= 1.0 {
        x
    } else if a >= 2.0 {
        0.0
    } else {
        x.signum() * (2.0 - a)
    }
}

fn filter_slope(x: f64) -> f64 {
    let a = x.abs();
    if a <= 1.0 {
        1.0
    } else if a >= 2.0 {
        0.0
    } else {
        -1.0
    }
}

/// Target density restricted to its rectangle and evaluated off-grid by
/// quadratic B-spline quasi-interpolation of the node values, clamped at
/// the edges. Unlike bilinear interpolation the result has a continuous
/// gradient, which Newton needs where `g` is steep relative to its floor;
/// as a convex combination of node values it keeps `g >= theta`.
struct Target {
    g: GridField,
}

/// Weights and derivative weights of the three quadratic B-splines around
/// the nearest node, at offset `t` in `[-1/2, 1/2]` from it.
#[inline]
fn bspline2(t: f64) -> ([f64; 3], [f64; 3]) {
    let (a, b) = (0.5 - t, 0.5 + t);
    ([0.5 * a * a, 0.75 - t * t, 0.5 * b * b], [-a, -2.0 * t, b])
}

/// Nearest node, offset from it, and whether `x` was clamped into range.
#[inline]
fn locate(x: f64, min: f64, dx: f64, n: usize) -> (usize, f64, bool) {
    let r = (x - min) / dx;
    let rc = r.clamp(0.0, (n - 1) as f64);
    let m = rc.round();
    (m as usize, rc - m, rc != r)
}

/// Node values of the source density seen through the same quadratic
/// B-spline as the target, so that `f / g` is exactly 1 wherever the two
/// rectangles hold identical data and the map is a grid-aligned shift.
fn spline_smooth(f: &GridField) -> Vec<f64> {
    let g = f.grid();
    let (n1, n2) = (g.n1, g.n2);
    let w = [0.125, 0.75, 0.125];
    let mut tmp = vec![0.0; g.len()];
    for j in 0..n2 {
        for i in 0..n1 {
            let nb = [i.saturating_sub(1), i, (i + 1).min(n1 - 1)];
            tmp[g.index(i, j)] = nb.iter().zip(w).map(|(&ii, c)| c * f.get(ii, j)).sum();
        }
    }
    let mut out = vec![0.0; g.len()];
    for j in 0..n2 {
        let nb = [j.saturating_sub(1), j, (j + 1).min(n2 - 1)];
        for i in 0..n1 {
            out[g.index(i, j)] = nb.iter().zip(w).map(|(&jj, c)| c * tmp[g.index(i, jj)]).sum();
        }
    }
    out
}

impl Target {
    fn new(pair: &DensityPair) -> Result<Self> {
        let r = pair.y_rect;
        Ok(Target { g: pair.g.crop(r.i0, r.i1, r.j0, r.j1)? })
    }

    fn grid(&self) -> &Grid2D {
        self.g.grid()
    }

    /// Value and gradient at `p`; gradient components vanish along
    /// clamped directions.
    fn eval(&self, p: (f64, f64)) -> (f64, f64, f64) {
        let gr = self.g.grid();
        let (i, s, c1) = locate(p.0, gr.x1_min, gr.dx, gr.n1);
        let (j, t, c2) = locate(p.1, gr.x2_min, gr.dx, gr.n2);
        let (wi, di) = bspline2(s);
        let (wj, dj) = bspline2(t);
        let (mut val, mut d1, mut d2) = (0.0, 0.0, 0.0);
        for (b, jj) in [j.saturating_sub(1), j, (j + 1).min(gr.n2 - 1)].into_iter().enumerate() {
            for (a, ii) in [i.saturating_sub(1), i, (i + 1).min(gr.n1 - 1)].into_iter().enumerate() {
                let v = self.g.get(ii, jj);
                val += wi[a] * wj[b] * v;
                d1 += di[a] * wj[b] * v;
                d2 += wi[a] * dj[b] * v;
            }
        }
        let d1 = if c1 { 0.0 } else { d1 / gr.dx };
        let d2 = if c2 { 0.0 } else { d2 / gr.dx };
        (val, d1, d2)
    }

    fn violates(&self, p: (f64, f64)) -> bool {
        let gr = self.g.grid();
        let m = 2.0 * gr.dx;
        p.0 < gr.x1_min - m || p.0 > gr.x1_max + m || p.1 < gr.x2_min - m || p.1 > gr.x2_max + m
    }
}

const ROW_CAP: usize = 40;

/// Residual value with its linearisation in the node values and in `u0`.
#[derive(Clone, Copy)]
struct Lin {
    val: f64,
    dc: f64,
    n: usize,
    idx: [usize; ROW_CAP],
    coef: [f64; ROW_CAP],
}

impl Lin {
    fn new(val: f64) -> Self {
        Lin { val, dc: 0.0, n: 0, idx: [0; ROW_CAP], coef: [0.0; ROW_CAP] }
    }

    #[inline]
    fn add(&mut self, k: usize, v: f64) {
        if v != 0.0 {
            self.idx[self.n] = k;
            self.coef[self.n] = v;
            self.n += 1;
        }
    }

    fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx[..self.n].iter().copied().zip(self.coef[..self.n].iter().copied())
    }

    /// `a * self + b * other`.
    fn combine(&self, a: f64, other: &Lin, b: f64) -> Lin {
        let mut out = Lin::new(a * self.val + b * other.val);
        out.dc = a * self.dc + b * other.dc;
        for (k, v) in self.entries() {
            out.add(k, a * v);
        }
        for (k, v) in other.entries() {
            out.add(k, b * v);
        }
        out
    }

    /// `F_M + eps S((F_A - F_M) / eps)` and its derivative.
    fn filtered(monotone: &Lin, accurate: &Lin, eps: f64) -> Lin {
        let z = (accurate.val - monotone.val) / eps;
        let slope = filter_slope(z);
        let mut out = monotone.combine(1.0 - slope, accurate, slope);
        out.val = monotone.val + eps * filter(z);
        out
    }
}

/// Everything needed to evaluate the discrete equations for one pair.
pub(crate) struct Problem {
    grid: Grid2D,
    f: Vec<f64>,
    target: Target,
    y: (f64, f64, f64, f64),
    cfg: ResolvedConfig,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Branch {
    Axes,
    Diagonals,
}

impl Problem {
    pub(crate) fn new(pair: &DensityPair, cfg: ResolvedConfig) -> Result<Self> {
        let r = pair.x_rect;
        let fx = pair.f.crop(r.i0, r.i1, r.j0, r.j1)?;
        let grid = *fx.grid();
        let target = Target::new(pair)?;
        let tg = *target.grid();
        Ok(Problem {
            grid,
            f: spline_smooth(&fx),
            y: (tg.x1_min, tg.x1_max, tg.x2_min, tg.x2_max),
            target,
            cfg,
        })
    }

    pub(crate) fn grid(&self) -> &Grid2D {
        &self.grid
    }

    fn fixed_index(&self) -> usize {
        self.grid.index(self.cfg.fixed.0, self.cfg.fixed.1)
    }

    /// Initial guess `U1(x1) + U2(x2)`, where `U1'` and `U2'` are the 1D
    /// optimal maps between the axis marginals of `f` and `g`. It is convex,
    /// exact for translations and for the identity, and pinned at the fixed node.
    fn initial_guess(&self) -> Vec<f64> {
        let g = &self.grid;
        let tg = self.target.grid();
        // Both marginals see the same smoothing, so identical data gives
        // identical marginals.
        let t = spline_smooth(&self.target.g);
        let (n1, n2) = (g.n1, g.n2);
        let mut f1 = vec![0.0; n1];
        let mut f2 = vec![0.0; n2];
        let mut g1 = vec![0.0; n1];
        let mut g2 = vec![0.0; n2];
        for j in 0..n2 {
            for i in 0..n1 {
                let v = self.f[g.index(i, j)];
                f1[i] += v;
                f2[j] += v;
                let w = t[g.index(i, j)];
                g1[i] += w;
                g2[j] += w;
            }
        }
        let u1 = integrate(&marginal_map(&f1, &g1, tg.x1_min, g.dx), g.dx);
        let u2 = integrate(&marginal_map(&f2, &g2, tg.x2_min, g.dx), g.dx);
        let mut u: Vec<f64> = (0..g.len()).map(|k| u1[k % n1] + u2[k / n1]).collect();
        let pin = u[self.fixed_index()];
        u.iter_mut().for_each(|v| *v -= pin);
        u
    }

    /// `f / g(p)` with its gradient in `p`.
    #[inline]
    fn ratio(&self, fval: f64, p: (f64, f64)) -> (f64, f64, f64) {
        let (g, g1, g2) = self.target.eval(p);
        let t = fval / g;
        let s = -t / g;
        (t, s * g1, s * g2)
    }

    /// One branch of the monotone operator, e.g. MA1 for `Branch::Axes`.
    fn branch(&self, u: &[f64], c: f64, i: usize, j: usize, which: Branch) -> Lin {
        let g = &self.grid;
        let dx = g.dx;
        let h2 = dx * dx;
        let k = g.index(i, j);
        let m1 = g.n1;
        let (e, w, n, s) = (k + 1, k - 1, k + m1, k - m1);
        let (ne, nw, se, sw) = (k + m1 + 1, k + m1 - 1, k - m1 + 1, k - m1 - 1);
        let delta = self.cfg.delta;
        let fval = self.f[k];
        // (plus, minus, scale) for the two second differences, and the
        // gradient point with its stencil coefficients.
        let (a_nodes, b_nodes, sd_scale) = match which {
            Branch::Axes => ((e, w), (n, s), 1.0 / h2),
            Branch::Diagonals => ((ne, sw), (se, nw), 0.5 / h2),
        };
        let da = (u[a_nodes.0] + u[a_nodes.1] - 2.0 * u[k]) * sd_scale;
        let db = (u[b_nodes.0] + u[b_nodes.1] - 2.0 * u[k]) * sd_scale;
        let (p, p_coefs): ((f64, f64), [(usize, f64, f64); 4]) = match which {
            Branch::Axes => {
                let q = 0.5 / dx;
                (
                    ((u[e] - u[w]) * q, (u[n] - u[s]) * q),
                    [(e, q, 0.0), (w, -q, 0.0), (n, 0.0, q), (s, 0.0, -q)],
                )
            }
            Branch::Diagonals => {
                let q = 0.25 / dx;
                let dv = u[ne] - u[sw];
                let dp = u[se] - u[nw];
                (
                    ((dv + dp) * q, (dv - dp) * q),
                    [(ne, q, q), (sw, -q, -q), (se, q, -q), (nw, -q, q)],
                )
            }
        };
        let (t, t1, t2) = self.ratio(fval, p);
        let prod = da.max(delta) * db.max(delta) + da.min(delta) + db.min(delta);
        let dpa = if da > delta { db.max(delta) } else { 1.0 };
        let dpb = if db > delta { da.max(delta) } else { 1.0 };
        let mut lin = Lin::new(prod - t - c);
        lin.dc = -1.0;
        lin.add(a_nodes.0, dpa * sd_scale);
        lin.add(a_nodes.1, dpa * sd_scale);
        lin.add(b_nodes.0, dpb * sd_scale);
        lin.add(b_nodes.1, dpb * sd_scale);
        lin.add(k, -2.0 * (dpa + dpb) * sd_scale);
        for (node, c1, c2) in p_coefs {
            lin.add(node, -(t1 * c1 + t2 * c2));
        }
        lin
    }

    /// `-min(MA1, MA2)`, ties going to MA1. With `mu > 0` the value is
    /// unchanged but the linearisation is that of the smoothed minimum
    /// `(a + b - sqrt((a - b)^2 + mu^2)) / 2`.
    fn monotone_interior(&self, u: &[f64], c: f64, i: usize, j: usize, mu: f64) -> Lin {
        let a = self.branch(u, c, i, j, Branch::Axes);
        let b = self.branch(u, c, i, j, Branch::Diagonals);
        let val = -a.val.min(b.val);
        if mu > 0.0 {
            let wa = 0.5 * (1.0 - (a.val - b.val) / (a.val - b.val).hypot(mu));
            let mut out = a.combine(-wa, &b, wa - 1.0);
            out.val = val;
            return out;
        }
        let chosen = if a.val <= b.val { a } else { b };
        chosen.combine(-1.0, &Lin::new(0.0), 0.0)
    }

    /// Centred discretisation of `-(det D^2 u - f / g(grad u) - u0)`.
    fn accurate_interior(&self, u: &[f64], c: f64, i: usize, j: usize) -> Lin {
        let g = &self.grid;
        let dx = g.dx;
        let h2 = dx * dx;
        let k = g.index(i, j);
        let m1 = g.n1;
        let (e, w, n, s) = (k + 1, k - 1, k + m1, k - m1);
        let (ne, nw, se, sw) = (k + m1 + 1, k + m1 - 1, k - m1 + 1, k - m1 - 1);
        let d11 = (u[e] + u[w] - 2.0 * u[k]) / h2;
        let d22 = (u[n] + u[s] - 2.0 * u[k]) / h2;
        let d12 = (u[ne] + u[sw] - u[se] - u[nw]) / (4.0 * h2);
        let q = 0.5 / dx;
        let p = ((u[e] - u[w]) * q, (u[n] - u[s]) * q);
        let (t, t1, t2) = self.ratio(self.f[k], p);
        let mut lin = Lin::new(-(d11 * d22 - d12 * d12 - t - c));
        lin.dc = 1.0;
        lin.add(e, -d22 / h2);
        lin.add(w, -d22 / h2);
        lin.add(n, -d11 / h2);
        lin.add(s, -d11 / h2);
        lin.add(k, 2.0 * (d11 + d22) / h2);
        let m = 2.0 * d12 / (4.0 * h2);
        lin.add(ne, m);
        lin.add(sw, m);
        lin.add(se, -m);
        lin.add(nw, -m);
        lin.add(e, t1 * q);
        lin.add(w, -t1 * q);
        lin.add(n, t2 * q);
        lin.add(s, -t2 * q);
        lin
    }

    /// One-sided Neumann condition for the side containing `(i, j)`, in
    /// outward form: outward difference quotient minus the outward
    /// component of the matching target side. Corners average their two
    /// sides. `second_order` selects the three-point formulas.
    fn neumann(&self, u: &[f64], i: usize, j: usize, second_order: bool) -> Lin {
        let g = &self.grid;
        let dx = g.dx;
        let (m1, m2) = (g.n1, g.n2);
        let mut sides: Vec<Lin> = Vec::with_capacity(2);
        // `nodes` = [boundary, first inner, second inner]; `normal` = +-1.
        let mut side = |nodes: [usize; 3], target: f64, normal: f64| {
            let mut lin;
            if second_order {
                let q = 1.0 / (2.0 * dx);
                lin = Lin::new(q * (3.0 * u[nodes[0]] - 4.0 * u[nodes[1]] + u[nodes[2]]) - normal * target);
                lin.add(nodes[0], 3.0 * q);
                lin.add(nodes[1], -4.0 * q);
                lin.add(nodes[2], q);
            } else {
                let q = 1.0 / dx;
                // The quotient sits half a cell inside the edge; compare it
                // with the target half a cell inside the matching side.
                lin = Lin::new(q * (u[nodes[0]] - u[nodes[1]]) - normal * target + 0.5 * dx);
                lin.add(nodes[0], q);
                lin.add(nodes[1], -q);
            }
            sides.push(lin);
        };
        let (y1min, y1max, y2min, y2max) = self.y;
        if i == 0 {
            side([g.index(0, j), g.index(1, j), g.index(2, j)], y1min, -1.0);
        } else if i == m1 - 1 {
            side([g.index(i, j), g.index(i - 1, j), g.index(i - 2, j)], y1max, 1.0);
        }
        if j == 0 {
            side([g.index(i, 0), g.index(i, 1), g.index(i, 2)], y2min, -1.0);
        } else if j == m2 - 1 {
            side([g.index(i, j), g.index(i, j - 1), g.index(i, j - 2)], y2max, 1.0);
        }
        match sides.len() {
            1 => sides[0],
            2 => sides[0].combine(0.5, &sides[1], 0.5),
            _ => unreachable!("neumann called on an interior node"),
        }
    }

    fn node_equation(&self, u: &[f64], c: f64, i: usize, j: usize, mu: f64) -> Lin {
        let interior = self.grid.is_interior(i, j);
        match (self.cfg.scheme, interior) {
            (Scheme::Monotone, true) => self.monotone_interior(u, c, i, j, mu),
            (Scheme::Monotone, false) => self.neumann(u, i, j, false),
            (Scheme::Filtered, true) => {
                let m = self.monotone_interior(u, c, i, j, mu);
                let a = self.accurate_interior(u, c, i, j);
                Lin::filtered(&m, &a, self.cfg.epsilon)
            }
            (Scheme::Filtered, false) => {
                let m = self.neumann(u, i, j, false);
                let a = self.neumann(u, i, j, true);
                Lin::filtered(&m, &a, self.cfg.epsilon)
            }
        }
    }

    pub(crate) fn residual(&self, u: &[f64], c: f64) -> Vec<f64> {
        let g = &self.grid;
        let mut r = Vec::with_capacity(g.len() + 1);
        for j in 0..g.n2 {
            for i in 0..g.n1 {
                r.push(self.node_equation(u, c, i, j, 0.0).val);
            }
        }
        r.push(u[self.fixed_index()]);
        r
    }

    /// Residual and Jacobian of the full system: node equations followed
    /// by the pinning equation; unknowns are the node values followed by `u0`.
    pub(crate) fn assemble(&self, u: &[f64], c: f64) -> (Vec<f64>, TripletMatrix) {
        let g = &self.grid;
        let n = g.len();
        let mut r = Vec::with_capacity(n + 1);
        let mut jac = TripletMatrix::with_capacity(n + 1, 11 * n);
        for j in 0..g.n2 {
            for i in 0..g.n1 {
                let row = g.index(i, j);
                let lin = self.node_equation(u, c, i, j, 0.0);
                r.push(lin.val);
                for (col, v) in lin.entries() {
                    jac.push(row, col, v);
                }
                jac.push(row, n, lin.dc);
            }
        }
        r.push(u[self.fixed_index()]);
        jac.push(n, self.fixed_index(), 1.0);
        (r, jac)
    }

    /// Newton step for the reduced system: the pinned node is held fixed,
    /// its column replaced by the constant, and the pinning row dropped.
    /// Unknowns are ordered along the shorter grid axis to keep the band narrow.
    /// `mu` is the smoothing width of the branch minimum.
    fn newton_step(&self, u: &[f64], c: f64, mu: f64) -> Result<(Vec<f64>, f64)> {
        let g = &self.grid;
        let n = g.len();
        let (m1, m2) = (g.n1, g.n2);
        let by_rows = m1 <= m2;
        let order = |k: usize| -> usize {
            if by_rows {
                k
            } else {
                let (i, j) = (k % m1, k / m1);
                i * m2 + j
            }
        };
        let fixed_pos = order(self.fixed_index());
        let col_of = |k: usize| -> usize {
            let p = order(k);
            if p < fixed_pos {
                p
            } else {
                p - 1
            }
        };
        let mut a = TripletMatrix::with_capacity(n, 11 * n);
        let mut rhs = vec![0.0; n];
        for j in 0..m2 {
            for i in 0..m1 {
                let k = g.index(i, j);
                let row = order(k);
                let lin = self.node_equation(u, c, i, j, mu);
                rhs[row] = -lin.val;
                for (node, v) in lin.entries() {
                    if node != self.fixed_index() {
                        a.push(row, col_of(node), v);
                    }
                }
                a.push(row, n - 1, lin.dc);
            }
        }
        let lu = BorderedBandLu::factor(&a)?;
        let sol = lu.solve(&rhs);
        let mut du = vec![0.0; n];
        for k in 0..n {
            if k != self.fixed_index() {
                du[k] = sol[col_of(k)];
            }
        }
        Ok((du, sol[n - 1]))
    }

    fn violations(&self, u: &[f64]) -> usize {
        let g = &self.grid;
        let dx = g.dx;
        let mut count = 0;
        for j in 1..g.n2 - 1 {
            for i in 1..g.n1 - 1 {
                let k = g.index(i, j);
                let p = ((u[k + 1] - u[k - 1]) / (2.0 * dx), (u[k + g.n1] - u[k - g.n1]) / (2.0 * dx));
                if self.target.violates(p) {
                    count += 1;
                }
            }
        }
        count
    }

    pub(crate) fn solve(&self, max_iters: usize, tol: f64) -> Result<(Vec<f64>, f64, SolverReport)> {
        let mut u = self.initial_guess();
        let mut c = 0.0;
        let res = self.residual(&u, c);
        let mut r = max_norm(&res);
        let mut merits = vec![l2_norm(&res)];
        let mut history = vec![r];
        let mut steps = Vec::new();
        let mut iterations = 0;
        while r > tol {
            if iterations == max_iters {
                return Err(Error::NoConvergence { iterations, residual: r });
            }
            let (du, dc) = self.newton_step(&u, c, SMOOTHING * r)?;
            let reference = merits.iter().rev().take(MERIT_WINDOW).fold(0.0f64, |a, &b| a.max(b));
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let trial: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + step * b).collect();
                let tc = c + step * dc;
                let tres = self.residual(&trial, tc);
                let tm = l2_norm(&tres);
                if tm < reference {
                    accepted = Some((trial, tc, tres, tm));
                    break;
                }
                step *= 0.5;
            }
            iterations += 1;
            let Some((nu, nc, nres, nm)) = accepted else {
                return Err(Error::NoConvergence { iterations, residual: r });
            };
            u = nu;
            c = nc;
            merits.push(nm);
            r = max_norm(&nres);
            history.push(r);
            steps.push(step);
        }
        let report = SolverReport {
            iterations,
            residual_history: history,
            step_lengths: steps,
            converged: true,
            scheme: self.cfg.scheme,
            delta: self.cfg.delta,
            epsilon: self.cfg.epsilon,
            boundary_violations: self.violations(&u),
        };
        Ok((u, c, report))
    }
}

/// Monotone rearrangement of node masses `f` onto node masses `g` (equal
/// spacing `dx`, first target node at `y_min`), evaluated at the source
/// nodes. Each node's mass is spread over its cell; a source node is sent
/// to the target point of equal cumulative mass at its centre.
fn marginal_map(f: &[f64], g: &[f64], y_min: f64, dx: f64) -> Vec<f64> {
    let (mf, mg) = (f.iter().sum::<f64>(), g.iter().sum::<f64>());
    let mut out = Vec::with_capacity(f.len());
    let mut below = 0.0;
    let (mut j, mut cg) = (0, 0.0);
    for &v in f {
        let q = (below + 0.5 * v) / mf * mg;
        below += v;
        while j + 1 < g.len() && cg + g[j] < q {
            cg += g[j];
            j += 1;
        }
        let frac = if g[j] > 0.0 { ((q - cg) / g[j]).clamp(0.0, 1.0) } else { 0.5 };
        out.push(y_min + (j as f64 - 0.5 + frac) * dx);
    }
    out
}

/// Trapezoidal antiderivative of node values, zero at the first node.
fn integrate(v: &[f64], dx: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    let mut s = 0.0;
    out.push(0.0);
    for w in v.windows(2) {
        s += 0.5 * dx * (w[0] + w[1]);
        out.push(s);
    }
    out
}

const MAX_HALVINGS: usize = 20;

/// A step is accepted when the L2 residual drops below the largest of the
/// last `MERIT_WINDOW` accepted values.
const MERIT_WINDOW: usize = 3;

/// Width of the smoothed minimum in the Newton matrix, relative to the
/// current max-norm residual. Plain branch selection lets a branch switch
/// creep across neighbouring nodes one Newton step at a time.
const SMOOTHING: f64 = 0.1;

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn problem_for(pair: &DensityPair, cfg: &SolverConfig) -> Result<Problem> {
    Problem::new(pair, cfg.resolve(pair)?)
}

fn check_potential(u: &Potential, p: &Problem) -> Result<()> {
    if !u.u.grid().same_shape(p.grid()) {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

fn interior_lin(
    u: &Potential,
    pair: &DensityPair,
    cfg: &SolverConfig,
    i: usize,
    j: usize,
    f: impl Fn(&Problem, &[f64]) -> f64,
) -> Result<f64> {
    let p = problem_for(pair, cfg)?;
    check_potential(u, &p)?;
    if !p.grid().is_interior(i, j) {
        return Err(Error::Stencil { i, j });
    }
    Ok(f(&p, u.u.values()))
}

/// Axis-aligned branch MA1 at interior node `(i, j)` of the source rectangle.
pub fn ma1_residual(u: &Potential, pair: &DensityPair, cfg: &SolverConfig, i: usize, j: usize) -> Result<f64> {
    interior_lin(u, pair, cfg, i, j, |p, v| p.branch(v, u.u0, i, j, Branch::Axes).val)
}

/// Diagonal branch MA2.
pub fn ma2_residual(u: &Potential, pair: &DensityPair, cfg: &SolverConfig, i: usize, j: usize) -> Result<f64> {
    interior_lin(u, pair, cfg, i, j, |p, v| p.branch(v, u.u0, i, j, Branch::Diagonals).val)
}

/// `-min(MA1, MA2)`.
pub fn compact_residual(u: &Potential, pair: &DensityPair, cfg: &SolverConfig, i: usize, j: usize) -> Result<f64> {
    interior_lin(u, pair, cfg, i, j, |p, v| p.monotone_interior(v, u.u0, i, j, 0.0).val)
}

/// Centred second-order residual `-(det D^2 u - f / g(grad u) - u0)`.
pub fn accurate_residual(u: &Potential, pair: &DensityPair, cfg: &SolverConfig, i: usize, j: usize) -> Result<f64> {
    interior_lin(u, pair, cfg, i, j, |p, v| p.accurate_interior(v, u.u0, i, j).val)
}

/// Filtered combination of [`compact_residual`] and [`accurate_residual`].
pub fn filtered_residual(u: &Potential, pair: &DensityPair, cfg: &SolverConfig, i: usize, j: usize) -> Result<f64> {
    let eps = cfg.resolve(pair)?.epsilon;
    interior_lin(u, pair, cfg, i, j, |p, v| {
        let m = p.monotone_interior(v, u.u0, i, j, 0.0);
        let a = p.accurate_interior(v, u.u0, i, j);
        Lin::filtered(&m, &a, eps).val
    })
}

/// First-order one-sided Neumann residual at boundary node `(i, j)`.
pub fn neumann_residual(u: &Potential, pair: &DensityPair, i: usize, j: usize) -> Result<f64> {
    let p = problem_for(pair, &SolverConfig::default())?;
    check_potential(u, &p)?;
    if !p.grid().is_boundary(i, j) {
        return Err(Error::InvalidParameter(format!("({i}, {j}) is not a boundary node")));
    }
    Ok(p.neumann(u.u.values(), i, j, false).val)
}

/// Residual vector and sparse Jacobian of the full system at `u`.
///
/// Rows: one equation per node of the source rectangle (interior scheme or
/// boundary condition) in grid order, then the pinning row. Columns: node
/// values in grid order, then the constant `u0`.
pub fn assemble_system(u: &Potential, pair: &DensityPair, cfg: &SolverConfig) -> Result<(Vec<f64>, TripletMatrix)> {
    let p = problem_for(pair, cfg)?;
    check_potential(u, &p)?;
    let fixed = p.grid().index(p.cfg.fixed.0, p.cfg.fixed.1);
    if u.u.values()[fixed] != 0.0 {
        return Err(Error::InvalidParameter("potential is not pinned at the fixed node".into()));
    }
    Ok(p.assemble(u.u.values(), u.u0))
}

/// Initial iterate used by [`solve_monge_ampere`].
pub fn initial_potential(pair: &DensityPair, cfg: &SolverConfig) -> Result<Potential> {
    let p = problem_for(pair, cfg)?;
    let u = GridField::new(p.grid, p.initial_guess())?;
    Ok(Potential { u, u0_node: p.cfg.fixed, u0: 0.0 })
}

/// Solve the transport problem between the densities of `pair`.
pub fn solve_monge_ampere(pair: &DensityPair, cfg: &SolverConfig) -> Result<(Potential, SolverReport)> {
    let p = problem_for(pair, cfg)?;
    let (u, c, report) = p.solve(cfg.max_newton_iters, cfg.newton_tol)?;
    let u = GridField::new(p.grid, u)?;
    Ok((Potential { u, u0_node: p.cfg.fixed, u0: c }, report))
}

/// Max-norm of the full residual at `u`.
pub fn residual_norm(u: &Potential, pair: &DensityPair, cfg: &SolverConfig) -> Result<f64> {
    let p = problem_for(pair, cfg)?;
    check_potential(u, &p)?;
    Ok(max_norm(&p.residual(u.u.values(), u.u0)))
}
