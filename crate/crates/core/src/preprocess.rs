//! Turning raw signed signals into admissible transport data.
//!
//! A signal is split into positive and negative parts, each part is scaled
//! to unit mass, smoothed, and supported on a rectangle padded with a small
//! constant layer `theta` so the target density is bounded below on a convex
//! set. Source and target rectangles have the same size and are centred on
//! the centres of mass of the two densities.

use crate::error::{Error, Result};
use crate::grid::{Grid2D, GridField};

/// Node-aligned axis-parallel rectangle, inclusive index bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeRect {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl NodeRect {
    pub fn full(grid: &Grid2D) -> Self {
        NodeRect { i0: 0, i1: grid.n1 - 1, j0: 0, j1: grid.n2 - 1 }
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.i0..=self.i1).contains(&i) && (self.j0..=self.j1).contains(&j)
    }

    pub fn n1(&self) -> usize {
        self.i1 - self.i0 + 1
    }

    pub fn n2(&self) -> usize {
        self.j1 - self.j0 + 1
    }

    /// Physical extents `(x1_min, x1_max, x2_min, x2_max)`.
    pub fn extents(&self, grid: &Grid2D) -> (f64, f64, f64, f64) {
        (grid.x1(self.i0), grid.x1(self.i1), grid.x2(self.j0), grid.x2(self.j1))
    }

    pub fn center(&self, grid: &Grid2D) -> (f64, f64) {
        let (a, b, c, d) = self.extents(grid);
        (0.5 * (a + b), 0.5 * (c + d))
    }

    pub fn same_size(&self, other: &NodeRect) -> bool {
        self.n1() == other.n1() && self.n2() == other.n2()
    }

    /// Trapezoidal quadrature weight of node `(i, j)`, in units of `dx^2`:
    /// 1 inside, 1/2 on an edge, 1/4 at a corner, 0 outside.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if !self.contains(i, j) {
            return 0.0;
        }
        let w = |k: usize, lo: usize, hi: usize| if k == lo || k == hi { 0.5 } else { 1.0 };
        w(i, self.i0, self.i1) * w(j, self.j0, self.j1)
    }

    /// Trapezoidal integral of `field` over the rectangle.
    pub fn integrate(&self, field: &GridField) -> f64 {
        let mut s = 0.0;
        for j in self.j0..=self.j1 {
            for i in self.i0..=self.i1 {
                s += self.weight(i, j) * field.get(i, j);
            }
        }
        s * field.grid().cell_area()
    }
}

/// A raw signal that may take either sign.
#[derive(Clone, Debug)]
pub struct SignedSignal(pub GridField);

/// Transport data ready for the Monge-Ampère solver.
///
/// `f` vanishes outside `x_rect`; `g` vanishes outside `y_rect` and is at
/// least `theta` inside it. Masses are trapezoidal integrals over the
/// rectangles ([`NodeRect::integrate`]). Pairs built by [`convexify`] have
/// unit mass in both densities; hand-built pairs ([`DensityPair::new`])
/// need not balance exactly, the solver's additive constant absorbs small
/// mismatches.
#[derive(Clone, Debug)]
pub struct DensityPair {
    pub f: GridField,
    pub g: GridField,
    pub x_rect: NodeRect,
    pub y_rect: NodeRect,
    pub theta: f64,
    pub total_mass: f64,
    /// Nodes where the source density before padding was below `theta / 2`.
    pub layer: Vec<bool>,
}

impl DensityPair {
    pub fn new(f: GridField, g: GridField, x_rect: NodeRect, y_rect: NodeRect, theta: f64) -> Result<Self> {
        let grid = *f.grid();
        if !grid.same_shape(g.grid()) {
            return Err(Error::GridMismatch);
        }
        if !(theta > 0.0) {
            return Err(Error::InvalidParameter(format!("theta must be positive, got {theta}")));
        }
        for r in [x_rect, y_rect] {
            if r.i1 >= grid.n1 || r.j1 >= grid.n2 || r.n1() < 3 || r.n2() < 3 || r.i0 > r.i1 || r.j0 > r.j1 {
                return Err(Error::InvalidParameter(format!("rectangle {r:?} invalid for grid")));
            }
        }
        for j in 0..grid.n2 {
            for i in 0..grid.n1 {
                let fv = f.get(i, j);
                let gv = g.get(i, j);
                if fv < 0.0 || (!x_rect.contains(i, j) && fv != 0.0) {
                    return Err(Error::InvalidParameter(format!("source density invalid at ({i}, {j})")));
                }
                let bad_g = if y_rect.contains(i, j) { gv < theta } else { gv != 0.0 };
                if bad_g {
                    return Err(Error::InvalidParameter(format!("target density invalid at ({i}, {j})")));
                }
            }
        }
        let total_mass = x_rect.integrate(&f);
        if !(total_mass > 0.0) {
            return Err(Error::ZeroMass);
        }
        let layer = f.values().iter().map(|&v| v < 0.5 * theta).collect();
        Ok(DensityPair { f, g, x_rect, y_rect, theta, total_mass, layer })
    }

    pub fn grid(&self) -> &Grid2D {
        self.f.grid()
    }
}

/// Preprocessing parameters. Lengths are in grid cells.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    /// Layer height relative to the maximum of the target density.
    pub theta_rel: f64,
    /// Smoothing standard deviation in cells; 0 disables smoothing.
    pub sigma_rel: f64,
    /// Extra cells around the support on each side of the rectangles.
    pub margin_cells: usize,
    /// Values at or below this fraction of the maximum count as outside the support.
    pub support_rel: f64,
    /// Rings of zeros added around the input before anything else.
    /// `None` picks enough for the smoothing kernel and the margin.
    pub pad_cells: Option<usize>,
    /// Lower bound on the rectangle half-widths in cells. Misfit scans set
    /// it so that every trial uses the same rectangle size.
    pub min_half_cells: Option<(usize, usize)>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { theta_rel: 0.05, sigma_rel: 4.0, margin_cells: 2, support_rel: 1e-3, pad_cells: None, min_half_cells: None }
    }
}

impl PreprocessConfig {
    pub fn pad(&self) -> usize {
        self.pad_cells
            .unwrap_or_else(|| self.margin_cells + (3.0 * self.sigma_rel).ceil() as usize + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_rel > 0.0) {
            return Err(Error::InvalidParameter("theta_rel must be positive".into()));
        }
        if !(self.sigma_rel >= 0.0) {
            return Err(Error::InvalidParameter("sigma_rel must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.support_rel) {
            return Err(Error::InvalidParameter("support_rel must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

pub fn split_signs(s: &SignedSignal) -> (GridField, GridField) {
    (s.0.map(|v| v.max(0.0)), s.0.map(|v| (-v).max(0.0)))
}

/// Scale both fields to unit mass.
pub fn normalize_mass(f: &GridField, g: &GridField) -> Result<(GridField, GridField)> {
    let (mf, mg) = (f.mass(), g.mass());
    if !(mf > 0.0) || !(mg > 0.0) {
        return Err(Error::ZeroMass);
    }
    Ok((f.scale(1.0 / mf), g.scale(1.0 / mg)))
}

/// Rescale user-identified components of `g` so each carries the same mass
/// as the matching component of `f`. Masks index grid nodes; nodes outside
/// every mask are left alone.
pub fn rescale_components(f: &GridField, g: &GridField, components: &[(Vec<bool>, Vec<bool>)]) -> Result<GridField> {
    if !f.grid().same_shape(g.grid()) {
        return Err(Error::GridMismatch);
    }
    let n = f.grid().len();
    let mut out = g.clone();
    for (mf, mg) in components {
        if mf.len() != n || mg.len() != n {
            return Err(Error::InvalidParameter("component mask has the wrong length".into()));
        }
        let sf: f64 = f.values().iter().zip(mf).filter(|(_, &m)| m).map(|(v, _)| v).sum();
        let sg: f64 = g.values().iter().zip(mg).filter(|(_, &m)| m).map(|(v, _)| v).sum();
        if !(sf > 0.0) || !(sg > 0.0) {
            return Err(Error::ZeroMass);
        }
        let a = sf / sg;
        for (v, &m) in out.values_mut().iter_mut().zip(mg) {
            if m {
                *v *= a;
            }
        }
    }
    Ok(out)
}

/// Mass-weighted centre of the field.
pub fn centre_of_mass(f: &GridField) -> Result<(f64, f64)> {
    let g = f.grid();
    let (mut m, mut c1, mut c2) = (0.0, 0.0, 0.0);
    for j in 0..g.n2 {
        for i in 0..g.n1 {
            let v = f.get(i, j);
            m += v;
            c1 += v * g.x1(i);
            c2 += v * g.x2(j);
        }
    }
    if !(m > 0.0) {
        return Err(Error::ZeroMass);
    }
    Ok((c1 / m, c2 / m))
}

/// Tight node box around values above `support_rel * max`.
fn support_box(f: &GridField, support_rel: f64) -> Result<NodeRect> {
    let g = f.grid();
    let cut = support_rel * f.max();
    let mut r: Option<NodeRect> = None;
    for j in 0..g.n2 {
        for i in 0..g.n1 {
            if f.get(i, j) > cut {
                let b = r.get_or_insert(NodeRect { i0: i, i1: i, j0: j, j1: j });
                b.i0 = b.i0.min(i);
                b.i1 = b.i1.max(i);
                b.j0 = b.j0.min(j);
                b.j1 = b.j1.max(j);
            }
        }
    }
    r.ok_or(Error::ZeroMass)
}

/// Placement of the two equal rectangles.
struct Layout {
    /// Centre nodes.
    nf: (isize, isize),
    ng: (isize, isize),
    /// Centre of mass minus centre node, in physical units.
    ef: (f64, f64),
    eg: (f64, f64),
    /// Common half-widths in cells.
    h1: isize,
    h2: isize,
}

fn rectangle_layout(
    f: &GridField,
    g: &GridField,
    margin_cells: usize,
    support_rel: f64,
    min_half: (usize, usize),
) -> Result<Layout> {
    let grid = f.grid();
    let dx = grid.dx;
    let centre = |c: (f64, f64)| {
        let r = ((c.0 - grid.x1_min) / dx, (c.1 - grid.x2_min) / dx);
        let n = (r.0.round() as isize, r.1.round() as isize);
        (n, ((r.0 - n.0 as f64) * dx, (r.1 - n.1 as f64) * dx))
    };
    let (nf, ef) = centre(centre_of_mass(f)?);
    let (ng, eg) = centre(centre_of_mass(g)?);
    let mut h1 = 0isize;
    let mut h2 = 0isize;
    for (field, c) in [(f, nf), (g, ng)] {
        let b = support_box(field, support_rel)?;
        h1 = h1.max(c.0 - b.i0 as isize).max(b.i1 as isize - c.0);
        h2 = h2.max(c.1 - b.j0 as isize).max(b.j1 as isize - c.1);
    }
    let h1 = (h1.max(1) + margin_cells as isize).max(min_half.0 as isize);
    let h2 = (h2.max(1) + margin_cells as isize).max(min_half.1 as isize);
    Ok(Layout { nf, ng, ef, eg, h1, h2 })
}

/// Slopes `(a1, a2)` of the layer profile `1 + sum_i (a_i (x_i - c_i) + |a_i| h_i dx)`
/// on a `(2 h1 + 1) x (2 h2 + 1)` node rectangle centred at `c`, chosen so
/// that the profile's centroid is `c + e`. The profile is at least 1.
/// Offsets too large for a gentle tilt are scaled back.
fn layer_slopes(e: (f64, f64), h1: isize, h2: isize, dx: f64) -> (f64, f64) {
    // Trapezoid-weighted second moment per unit weight of the symmetric
    // index range, times dx^2.
    let q = |h: isize| {
        let h = h as f64;
        dx * dx * (2.0 * h * h + 1.0) / 6.0
    };
    let (q1, q2) = (q(h1), q(h2));
    let (hh1, hh2) = (h1 as f64 * dx, h2 as f64 * dx);
    let mut r = e.0.abs() * hh1 / q1 + e.1.abs() * hh2 / q2;
    let mut e = e;
    if r > 0.5 {
        e = (e.0 * 0.5 / r, e.1 * 0.5 / r);
        r = 0.5;
    }
    let d = 1.0 / (1.0 - r);
    (e.0 * d / q1, e.1 * d / q2)
}

/// Convexify with the default margin and support threshold.
pub fn convexify(f: &GridField, g: &GridField, theta: f64) -> Result<DensityPair> {
    let d = PreprocessConfig::default();
    convexify_with(f, g, theta, d.margin_cells, d.support_rel, (0, 0))
}

/// Place equal rectangles around the centres of mass of `f` and `g`, add
/// a layer of height at least `theta` inside each, zero everything outside,
/// and rescale to unit mass. The layer is flat up to a small tilt that puts
/// its centroid at the field's centre of mass.
///
/// The half-widths are the largest distance, over both fields, from the
/// centre of mass to the edge of the support, plus `margin_cells`, and at
/// least `min_half`.
pub fn convexify_with(
    f: &GridField,
    g: &GridField,
    theta: f64,
    margin_cells: usize,
    support_rel: f64,
    min_half: (usize, usize),
) -> Result<DensityPair> {
    let grid = *f.grid();
    if !grid.same_shape(g.grid()) {
        return Err(Error::GridMismatch);
    }
    if !(theta > 0.0) {
        return Err(Error::InvalidParameter(format!("theta must be positive, got {theta}")));
    }
    if f.min() < 0.0 || g.min() < 0.0 {
        return Err(Error::InvalidParameter("densities must be nonnegative".into()));
    }
    let dx = grid.dx;
    let Layout { nf, ng, ef, eg, h1, h2 } = rectangle_layout(f, g, margin_cells, support_rel, min_half)?;
    let too_large = || Error::SupportTooLarge { width: 2.0 * h1 as f64 * dx, height: 2.0 * h2 as f64 * dx };
    let rect = |c: (isize, isize)| -> Result<NodeRect> {
        let (i0, i1, j0, j1) = (c.0 - h1, c.0 + h1, c.1 - h2, c.1 + h2);
        if i0 < 0 || j0 < 0 || i1 >= grid.n1 as isize || j1 >= grid.n2 as isize {
            return Err(too_large());
        }
        Ok(NodeRect { i0: i0 as usize, i1: i1 as usize, j0: j0 as usize, j1: j1 as usize })
    };
    let x_rect = rect(nf)?;
    let y_rect = rect(ng)?;

    // Node rectangles cannot sit exactly on the centres of mass; a slight
    // tilt moves the layer's own centroid there, so the layer is carried
    // by the same translation as the data.
    let pad = |field: &GridField, r: &NodeRect, c: (isize, isize), e: (f64, f64)| {
        let (a1, a2) = layer_slopes(e, h1, h2, dx);
        let base = 1.0 + a1.abs() * h1 as f64 * dx + a2.abs() * h2 as f64 * dx;
        let mut out = GridField::zeros(grid);
        for j in r.j0..=r.j1 {
            for i in r.i0..=r.i1 {
                let (k1, k2) = (i as isize - c.0, j as isize - c.1);
                let w = base + a1 * k1 as f64 * dx + a2 * k2 as f64 * dx;
                out.set(i, j, field.get(i, j) + theta * w);
            }
        }
        out
    };
    let fp = pad(f, &x_rect, nf, ef);
    let gp = pad(g, &y_rect, ng, eg);
    let (mf, mg) = (x_rect.integrate(&fp), y_rect.integrate(&gp));
    let f_out = fp.scale(1.0 / mf);
    let g_out = gp.scale(1.0 / mg);
    let theta_out = theta / mg;
    let layer = (0..grid.len())
        .map(|k| {
            let (i, j) = (k % grid.n1, k / grid.n1);
            x_rect.contains(i, j) && f.get(i, j) < 0.5 * theta
        })
        .collect();
    Ok(DensityPair {
        f: f_out,
        g: g_out,
        x_rect,
        y_rect,
        theta: theta_out,
        total_mass: 1.0,
        layer,
    })
}

/// Normalised, truncated 1D Gaussian weights for offsets `-r..=r` cells.
pub fn gaussian_kernel(sigma_cells: f64) -> Vec<f64> {
    let r = (3.0 * sigma_cells).ceil() as isize;
    let w: Vec<f64> = (-r..=r)
        .map(|k| (-(k as f64).powi(2) / (2.0 * sigma_cells * sigma_cells)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian smoothing with standard deviation `sigma` (physical
/// units), truncated at three standard deviations. Edges use half-sample
/// reflection, which keeps both constants and total mass unchanged.
pub fn smooth(field: &GridField, sigma: f64) -> GridField {
    let grid = *field.grid();
    if !(sigma > 0.0) {
        return field.clone();
    }
    let w = gaussian_kernel(sigma / grid.dx);
    let r = (w.len() / 2) as isize;
    let reflect = |k: isize, n: usize| -> usize {
        let n = n as isize;
        let period = 2 * n;
        let mut m = k.rem_euclid(period);
        if m >= n {
            m = period - 1 - m;
        }
        m as usize
    };
    let (n1, n2) = (grid.n1, grid.n2);
    let src = field.values();
    let mut tmp = vec![0.0; src.len()];
    for j in 0..n2 {
        for i in 0..n1 {
            let mut s = 0.0;
            for (t, wk) in w.iter().enumerate() {
                let ii = reflect(i as isize + t as isize - r, n1);
                s += wk * src[j * n1 + ii];
            }
            tmp[j * n1 + i] = s;
        }
    }
    let mut out = vec![0.0; src.len()];
    for j in 0..n2 {
        for i in 0..n1 {
            let mut s = 0.0;
            for (t, wk) in w.iter().enumerate() {
                let jj = reflect(j as isize + t as isize - r, n2);
                s += wk * tmp[jj * n1 + i];
            }
            out[j * n1 + i] = s;
        }
    }
    GridField::new(grid, out).expect("smoothing finite input")
}

/// Estimate of the Lipschitz constant of `f(x) / g(y)` in `y`:
/// `max f * max |grad g| / (min g)^2`, gradients taken inside the target rectangle.
pub fn lipschitz_bound(pair: &DensityPair) -> f64 {
    let g = &pair.g;
    let r = pair.y_rect;
    let dx = pair.grid().dx;
    let mut gmax_grad = 0.0f64;
    let mut gmin = f64::INFINITY;
    for j in r.j0..=r.j1 {
        for i in r.i0..=r.i1 {
            gmin = gmin.min(g.get(i, j));
            let d1 = if i == r.i0 {
                (g.get(i + 1, j) - g.get(i, j)) / dx
            } else if i == r.i1 {
                (g.get(i, j) - g.get(i - 1, j)) / dx
            } else {
                (g.get(i + 1, j) - g.get(i - 1, j)) / (2.0 * dx)
            };
            let d2 = if j == r.j0 {
                (g.get(i, j + 1) - g.get(i, j)) / dx
            } else if j == r.j1 {
                (g.get(i, j) - g.get(i, j - 1)) / dx
            } else {
                (g.get(i, j + 1) - g.get(i, j - 1)) / (2.0 * dx)
            };
            gmax_grad = gmax_grad.max(d1.hypot(d2));
        }
    }
    pair.f.max() * gmax_grad / (gmin * gmin)
}

/// Full preparation of one nonnegative pair: pad, normalise, smooth,
/// convexify.
pub fn prepare_pair(f: &GridField, g: &GridField, cfg: &PreprocessConfig) -> Result<DensityPair> {
    let (fs, gs) = smoothed(f, g, cfg)?;
    let theta = cfg.theta_rel * gs.max();
    let min_half = cfg.min_half_cells.unwrap_or((0, 0));
    match convexify_with(&fs, &gs, theta, cfg.margin_cells, cfg.support_rel, min_half) {
        // Rectangles centred on off-centre centroids can overrun the
        // padding. The smoothed fields already end in a kernel radius of
        // zeros, so growing the padding now changes nothing else.
        Err(Error::SupportTooLarge { .. }) if cfg.pad_cells.is_none() => {
            let extra = rectangle_overflow(&fs, &gs, cfg)?;
            convexify_with(&fs.pad(extra), &gs.pad(extra), theta, cfg.margin_cells, cfg.support_rel, min_half)
        }
        other => other,
    }
}

/// Padded, mass-balanced and smoothed copies of a nonnegative pair.
fn smoothed(f: &GridField, g: &GridField, cfg: &PreprocessConfig) -> Result<(GridField, GridField)> {
    cfg.validate()?;
    if !f.grid().same_shape(g.grid()) {
        return Err(Error::GridMismatch);
    }
    let pad = cfg.pad();
    let (fp, gp) = (f.pad(pad), g.pad(pad));
    let (fn_, gn) = normalize_mass(&fp, &gp)?;
    let sigma = cfg.sigma_rel * fp.grid().dx;
    Ok((smooth(&fn_, sigma), smooth(&gn, sigma)))
}

/// Rectangle half-widths, in cells, that [`prepare_pair`] would use for
/// this pair.
pub fn rectangle_half_cells(f: &GridField, g: &GridField, cfg: &PreprocessConfig) -> Result<(usize, usize)> {
    let (fs, gs) = smoothed(f, g, cfg)?;
    let l = rectangle_layout(&fs, &gs, cfg.margin_cells, cfg.support_rel, cfg.min_half_cells.unwrap_or((0, 0)))?;
    Ok((l.h1 as usize, l.h2 as usize))
}

/// Cells by which the convexify rectangles overrun the grid on the worst side.
fn rectangle_overflow(f: &GridField, g: &GridField, cfg: &PreprocessConfig) -> Result<usize> {
    let grid = f.grid();
    let min_half = cfg.min_half_cells.unwrap_or((0, 0));
    let Layout { nf, ng, h1, h2, .. } = rectangle_layout(f, g, cfg.margin_cells, cfg.support_rel, min_half)?;
    let mut over = 0isize;
    for c in [nf, ng] {
        over = over
            .max(h1 - c.0)
            .max(h2 - c.1)
            .max(c.0 + h1 - (grid.n1 as isize - 1))
            .max(c.1 + h2 - (grid.n2 as isize - 1));
    }
    Ok(over.max(0) as usize)
}

/// Prepared positive and negative parts of a signed pair. `None` marks a
/// part with no mass in either signal, whose transport cost is zero.
#[derive(Clone, Debug)]
pub struct SignedPairs {
    pub plus: Option<DensityPair>,
    pub minus: Option<DensityPair>,
}

/// Largest rectangle half-widths over the two signed parts of a pair.
pub fn signed_half_cells(f: &SignedSignal, g: &SignedSignal, cfg: &PreprocessConfig) -> Result<(usize, usize)> {
    let (fp, fm) = split_signs(f);
    let (gp, gm) = split_signs(g);
    let mut h = (0, 0);
    for (a, b) in [(&fp, &gp), (&fm, &gm)] {
        if a.mass() > 0.0 && b.mass() > 0.0 {
            let p = rectangle_half_cells(a, b, cfg)?;
            h = (h.0.max(p.0), h.1.max(p.1));
        }
    }
    Ok(h)
}

pub fn prepare_signed(f: &SignedSignal, g: &SignedSignal, cfg: &PreprocessConfig) -> Result<SignedPairs> {
    let (fp, fm) = split_signs(f);
    let (gp, gm) = split_signs(g);
    let part = |a: &GridField, b: &GridField| -> Result<Option<DensityPair>> {
        match (a.mass() > 0.0, b.mass() > 0.0) {
            (false, false) => Ok(None),
            (true, true) => prepare_pair(a, b, cfg).map(Some),
            _ => Err(Error::MassMismatchUnresolvable),
        }
    };
    Ok(SignedPairs { plus: part(&fp, &gp)?, minus: part(&fm, &gm)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> Grid2D {
        Grid2D::new(n, n, 0.0, 1.0, 0.0, 1.0).unwrap()
    }

    fn blob(grid: Grid2D, c: (f64, f64), s: f64) -> GridField {
        GridField::from_fn(grid, |x, y| {
            let r2 = (x - c.0).powi(2) + (y - c.1).powi(2);
            let v = (-r2 / (2.0 * s * s)).exp();
            if v > 1e-4 {
                v
            } else {
                0.0
            }
        })
    }

    #[test]
    fn split_small_vector() {
        let g = Grid2D::new(3, 3, 0.0, 2.0, 0.0, 2.0).unwrap();
        let mut v = vec![0.0; 9];
        v[0] = 1.0;
        v[1] = -2.0;
        let s = SignedSignal(GridField::new(g, v).unwrap());
        let (p, m) = split_signs(&s);
        assert_eq!(&p.values()[..3], &[1.0, 0.0, 0.0]);
        assert_eq!(&m.values()[..3], &[0.0, 2.0, 0.0]);
        let pos = SignedSignal(p.clone());
        assert!(split_signs(&pos).1.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_scales_to_unit_mass() {
        let g = grid(11);
        let f = GridField::from_fn(g, |_, _| 2.0 / (121.0 * 0.01));
        assert!((f.mass() - 2.0).abs() < 1e-12);
        let (a, b) = normalize_mass(&f, &f).unwrap();
        assert!((a.get(3, 3) - 0.5 * f.get(3, 3)).abs() < 1e-15);
        assert!((b.mass() - 1.0).abs() < 1e-12);
        let (c, _) = normalize_mass(&a, &a).unwrap();
        assert!((c.get(2, 2) - a.get(2, 2)).abs() < 1e-15);
        assert!(matches!(normalize_mass(&GridField::zeros(g), &f), Err(Error::ZeroMass)));
    }

    #[test]
    fn hat_profile_has_unit_mass() {
        // Hat in x1 times an indicator of width 1 in x2, dx = 0.01.
        let g = Grid2D::new(401, 101, -2.0, 2.0, 0.0, 1.0).unwrap();
        let f = GridField::from_fn(g, |x, _| (1.0 - x.abs()).max(0.0) / 1.01);
        assert!((f.mass() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn convexify_identical_blobs() {
        let g = grid(41);
        let f = blob(g, (0.5, 0.45), 0.08);
        let pair = convexify(&f, &f, 0.05).unwrap();
        assert_eq!(pair.x_rect, pair.y_rect);
        assert_eq!(pair.f.values(), pair.g.values());
        assert!((pair.x_rect.integrate(&pair.f) - 1.0).abs() < 1e-10);
        assert!((pair.y_rect.integrate(&pair.g) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn convexify_translation() {
        let g = grid(61);
        let f = blob(g, (0.35, 0.5), 0.06);
        let h = blob(g, (0.35 + 0.25, 0.5), 0.06);
        let pair = convexify(&f, &h, 0.02).unwrap();
        assert!(pair.x_rect.same_size(&pair.y_rect));
        assert_eq!(pair.y_rect.i0, pair.x_rect.i0 + 15);
        assert_eq!(pair.y_rect.j0, pair.x_rect.j0);
        let (cy, cx) = (pair.y_rect.center(&g), pair.x_rect.center(&g));
        assert!((cy.0 - cx.0 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn convexify_keeps_centre_of_mass() {
        let g = grid(51);
        // Compact bumps centred between nodes, so nothing is cut off.
        let bump = |c: (f64, f64)| {
            GridField::from_fn(g, move |x, y| {
                let r2 = ((x - c.0).powi(2) + (y - c.1).powi(2)) / 0.1f64.powi(2);
                if r2 < 1.0 { (1.0 - r2).powi(2) } else { 0.0 }
            })
        };
        // Centre under the trapezoidal weights of a rectangle.
        let centre = |a: &GridField, r: &NodeRect| {
            let (mut m, mut c1, mut c2) = (0.0, 0.0, 0.0);
            for j in r.j0..=r.j1 {
                for i in r.i0..=r.i1 {
                    let v = a.get(i, j) * r.weight(i, j);
                    m += v;
                    c1 += v * g.x1(i);
                    c2 += v * g.x2(j);
                }
            }
            (c1 / m, c2 / m)
        };
        let (f, h) = (bump((0.413, 0.537)), bump((0.586, 0.471)));
        for theta in [0.05, 0.5, 5.0] {
            let pair = convexify(&f, &h, theta).unwrap();
            for (a, b, r) in [(&f, &pair.f, &pair.x_rect), (&h, &pair.g, &pair.y_rect)] {
                let (ca, cb) = (centre_of_mass(a).unwrap(), centre(b, r));
                assert!((ca.0 - cb.0).abs() < 1e-12 && (ca.1 - cb.1).abs() < 1e-12, "{ca:?} {cb:?}");
            }
        }
    }

    #[test]
    fn convexify_respects_invariants() {
        let g = grid(51);
        let f = blob(g, (0.4, 0.55), 0.04);
        let h = blob(g, (0.6, 0.45), 0.06);
        let pair = convexify(&f, &h, 0.1).unwrap();
        for j in 0..g.n2 {
            for i in 0..g.n1 {
                let gv = pair.g.get(i, j);
                if pair.y_rect.contains(i, j) {
                    assert!(gv >= pair.theta);
                } else {
                    assert_eq!(gv, 0.0);
                }
                assert!(pair.f.get(i, j) >= 0.0);
            }
        }
        assert!((pair.x_rect.integrate(&pair.f) - 1.0).abs() < 1e-10 && (pair.y_rect.integrate(&pair.g) - 1.0).abs() < 1e-10);
        // Both supports fit inside their rectangles.
        for j in 0..g.n2 {
            for i in 0..g.n1 {
                if f.get(i, j) > 1e-3 * f.max() {
                    assert!(pair.x_rect.contains(i, j));
                }
                if h.get(i, j) > 1e-3 * h.max() {
                    assert!(pair.y_rect.contains(i, j));
                }
            }
        }
    }

    #[test]
    fn convexify_rejects_large_support() {
        let g = grid(21);
        let f = GridField::from_fn(g, |_, _| 1.0);
        assert!(matches!(convexify(&f, &f, 0.1), Err(Error::SupportTooLarge { .. })));
    }

    #[test]
    fn smoothing_identity_constant_and_spike() {
        let g = grid(41);
        let f = blob(g, (0.5, 0.5), 0.1);
        assert_eq!(smooth(&f, 0.0).values(), f.values());
        let c = GridField::from_fn(g, |_, _| 0.7);
        let sc = smooth(&c, 3.0 * g.dx);
        assert!(sc.values().iter().all(|v| (v - 0.7).abs() < 1e-14));

        let mut spike = GridField::zeros(g);
        spike.set(20, 20, 1.0);
        let sigma = 2.0 * g.dx;
        let s = smooth(&spike, sigma);
        // Direct evaluation of the normalised truncated kernel.
        let norm: f64 = (-6..=6).map(|k: i32| (-(k * k) as f64 / 8.0).exp()).sum();
        for (i, j) in [(20, 20), (21, 20), (23, 18), (26, 20), (27, 20)] {
            let di = i as i32 - 20;
            let dj = j as i32 - 20;
            let expect = if di.abs() > 6 || dj.abs() > 6 {
                0.0
            } else {
                (-(di * di) as f64 / 8.0).exp() * (-(dj * dj) as f64 / 8.0).exp() / (norm * norm)
            };
            assert!((s.get(i, j) - expect).abs() < 1e-6);
        }
        assert!((s.mass() - spike.mass()).abs() < 1e-12 * spike.mass());
    }

    #[test]
    fn lipschitz_of_linear_target() {
        let g = grid(21);
        let f = GridField::from_fn(g, |_, _| 1.0);
        let h = GridField::from_fn(g, |x, _| 1.0 + 0.1 * x);
        let r = NodeRect::full(&g);
        let pair = DensityPair::new(f, h.clone(), r, r, 0.5).unwrap();
        let k = lipschitz_bound(&pair);
        assert!((k - 0.1).abs() < 0.005, "K = {k}");
        let flat = DensityPair::new(GridField::from_fn(g, |_, _| 1.0), GridField::from_fn(g, |_, _| 2.0), r, r, 1.0)
            .unwrap();
        assert_eq!(lipschitz_bound(&flat), 0.0);
    }

    #[test]
    fn signed_parts_zero_handling() {
        let g = grid(31);
        let pos = blob(g, (0.5, 0.5), 0.06);
        let f = SignedSignal(pos.clone());
        let parts = prepare_signed(&f, &f, &PreprocessConfig::default()).unwrap();
        assert!(parts.plus.is_some() && parts.minus.is_none());
        let neg = SignedSignal(pos.scale(-1.0));
        assert!(matches!(
            prepare_signed(&f, &neg, &PreprocessConfig::default()),
            Err(Error::MassMismatchUnresolvable)
        ));
    }

    #[test]
    fn component_rescaling() {
        let g = grid(11);
        let f = GridField::from_fn(g, |x, _| if x < 0.5 { 1.0 } else { 3.0 });
        let h = GridField::from_fn(g, |_, _| 1.0);
        let left: Vec<bool> = (0..g.len()).map(|k| (k % 11) < 5).collect();
        let right: Vec<bool> = left.iter().map(|b| !b).collect();
        let out = rescale_components(&f, &h, &[(left.clone(), left.clone()), (right.clone(), right)]).unwrap();
        let mass = |fld: &GridField, m: &[bool]| -> f64 {
            fld.values().iter().zip(m).filter(|(_, &b)| b).map(|(v, _)| v).sum()
        };
        assert!((mass(&out, &left) - mass(&f, &left)).abs() < 1e-12);
        assert!((out.mass() - f.mass()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn split_reconstructs(vals in proptest::collection::vec(-5.0f64..5.0, 16)) {
            let g = Grid2D::new(4, 4, 0.0, 1.0, 0.0, 1.0).unwrap();
            let s = SignedSignal(GridField::new(g, vals.clone()).unwrap());
            let (p, m) = split_signs(&s);
            for k in 0..16 {
                prop_assert_eq!(p.values()[k] - m.values()[k], vals[k]);
            }
        }

        #[test]
        fn smoothing_preserves_mass_and_sign(
            vals in proptest::collection::vec(0.0f64..3.0, 15 * 12),
            sigma in 0.01f64..0.3,
        ) {
            let g = Grid2D::new(15, 12, 0.0, 1.4, 0.0, 1.1).unwrap();
            let f = GridField::new(g, vals).unwrap();
            let s = smooth(&f, sigma);
            prop_assert!((s.mass() - f.mass()).abs() <= 1e-12 * f.mass().max(1e-300));
            prop_assert!(s.min() >= 0.0);
        }

        #[test]
        fn convexify_translation_equivariant(cx in 0.3f64..0.5, cy in 0.3f64..0.6, s1 in 0.0f64..0.25, s2 in -0.1f64..0.1) {
            let g = grid(51);
            let f = blob(g, (cx, cy), 0.04);
            let h = blob(g, (cx + s1, cy + s2), 0.04);
            let pair = convexify(&f, &h, 0.05).unwrap();
            let di = pair.y_rect.i0 as f64 - pair.x_rect.i0 as f64 - s1 / g.dx;
            let dj = pair.y_rect.j0 as f64 - pair.x_rect.j0 as f64 - s2 / g.dx;
            prop_assert!(di.abs() <= 1.0 && dj.abs() <= 1.0);
            prop_assert!(pair.x_rect.same_size(&pair.y_rect));
            prop_assert!((pair.x_rect.integrate(&pair.f) - 1.0).abs() < 1e-10 && (pair.y_rect.integrate(&pair.g) - 1.0).abs() < 1e-10);
        }
    }
}
