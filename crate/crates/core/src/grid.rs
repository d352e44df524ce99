//! Uniform square-cell grids, scalar fields on them, and the nine-point
//! finite-difference operators used by the Monge-Ampère discretisation.
//!
//! Indices are zero-based in code. Node `(i, j)` sits at
//! `(x1_min + i * dx, x2_min + j * dx)`, `i` running along `x1` and `j`
//! along `x2`.

use std::f64::consts::SQRT_2;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

const SPACING_RTOL: f64 = 1e-12;

/// Uniform grid with square cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid2D {
    pub n1: usize,
    pub n2: usize,
    pub x1_min: f64,
    pub x1_max: f64,
    pub x2_min: f64,
    pub x2_max: f64,
    pub dx: f64,
}

impl Grid2D {
    pub fn new(n1: usize, n2: usize, x1_min: f64, x1_max: f64, x2_min: f64, x2_max: f64) -> Result<Self> {
        if n1 < 3 || n2 < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3x3 nodes, got {n1}x{n2}")));
        }
        if ![x1_min, x1_max, x2_min, x2_max].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGrid("non-finite extents".into()));
        }
        if x1_max <= x1_min || x2_max <= x2_min {
            return Err(Error::InvalidGrid("empty extents".into()));
        }
        let dx1 = (x1_max - x1_min) / (n1 - 1) as f64;
        let dx2 = (x2_max - x2_min) / (n2 - 1) as f64;
        if ((dx1 - dx2) / dx1).abs() > SPACING_RTOL {
            return Err(Error::InvalidGrid(format!("cells are not square: dx1 = {dx1}, dx2 = {dx2}")));
        }
        Ok(Grid2D { n1, n2, x1_min, x1_max, x2_min, x2_max, dx: dx1 })
    }

    /// Grid anchored at `(x1_min, x2_min)` with `n1 x n2` nodes of spacing `dx`.
    pub fn with_spacing(n1: usize, n2: usize, x1_min: f64, x2_min: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {dx}")));
        }
        let mut grid = Grid2D::new(
            n1,
            n2,
            x1_min,
            x1_min + (n1 - 1).max(1) as f64 * dx,
            x2_min,
            x2_min + (n2 - 1).max(1) as f64 * dx,
        )?;
        grid.dx = dx;
        Ok(grid)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n1 + i
    }

    #[inline]
    pub fn x1(&self, i: usize) -> f64 {
        self.x1_min + i as f64 * self.dx
    }

    #[inline]
    pub fn x2(&self, j: usize) -> f64 {
        self.x2_min + j as f64 * self.dx
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x1(i), self.x2(j))
    }

    #[inline]
    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        i > 0 && j > 0 && i + 1 < self.n1 && j + 1 < self.n2
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i < self.n1 && j < self.n2 && !self.is_interior(i, j)
    }

    /// Cell area used by the node quadrature.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dx
    }

    /// Sub-grid spanning nodes `i0..=i1`, `j0..=j1`.
    pub fn subgrid(&self, i0: usize, i1: usize, j0: usize, j1: usize) -> Result<Grid2D> {
        if i1 >= self.n1 || j1 >= self.n2 || i1 < i0 + 2 || j1 < j0 + 2 {
            return Err(Error::InvalidGrid(format!("bad sub-grid range [{i0},{i1}]x[{j0},{j1}]")));
        }
        Grid2D::with_spacing(i1 - i0 + 1, j1 - j0 + 1, self.x1(i0), self.x2(j0), self.dx)
    }

    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.n1 == other.n1
            && self.n2 == other.n2
            && (self.dx - other.dx).abs() <= SPACING_RTOL * self.dx
            && (self.x1_min - other.x1_min).abs() <= SPACING_RTOL * self.dx.max(self.x1_min.abs())
            && (self.x2_min - other.x2_min).abs() <= SPACING_RTOL * self.dx.max(self.x2_min.abs())
    }
}

/// Values of the 3x3 neighbourhood around a node. `e`/`w` step in `x1`,
/// `n`/`s` step in `x2`.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub c: f64,
    pub e: f64,
    pub w: f64,
    pub n: f64,
    pub s: f64,
    pub ne: f64,
    pub nw: f64,
    pub se: f64,
    pub sw: f64,
}

impl Stencil {
    #[inline]
    pub fn d_x1x1(&self, dx: f64) -> f64 {
        (self.e + self.w - 2.0 * self.c) / (dx * dx)
    }

    #[inline]
    pub fn d_x2x2(&self, dx: f64) -> f64 {
        (self.n + self.s - 2.0 * self.c) / (dx * dx)
    }

    #[inline]
    pub fn d_x1(&self, dx: f64) -> f64 {
        (self.e - self.w) / (2.0 * dx)
    }

    #[inline]
    pub fn d_x2(&self, dx: f64) -> f64 {
        (self.n - self.s) / (2.0 * dx)
    }

    /// Second difference along (1, 1)/sqrt(2).
    #[inline]
    pub fn d_vv(&self, dx: f64) -> f64 {
        (self.ne + self.sw - 2.0 * self.c) / (2.0 * dx * dx)
    }

    /// Second difference along (1, -1)/sqrt(2).
    #[inline]
    pub fn d_vpvp(&self, dx: f64) -> f64 {
        (self.se + self.nw - 2.0 * self.c) / (2.0 * dx * dx)
    }

    #[inline]
    pub fn d_v(&self, dx: f64) -> f64 {
        (self.ne - self.sw) / (2.0 * SQRT_2 * dx)
    }

    #[inline]
    pub fn d_vp(&self, dx: f64) -> f64 {
        (self.se - self.nw) / (2.0 * SQRT_2 * dx)
    }

    /// Centred mixed derivative.
    #[inline]
    pub fn d_x1x2(&self, dx: f64) -> f64 {
        (self.ne + self.sw - self.se - self.nw) / (4.0 * dx * dx)
    }
}

/// Scalar field sampled at the nodes of a [`Grid2D`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite value at node {k}")));
        }
        Ok(GridField { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        GridField { grid, values: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.n2 {
            for i in 0..grid.n1 {
                let (x1, x2) = grid.position(i, j);
                values.push(f(x1, x2));
            }
        }
        GridField { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.index(i, j);
        self.values[k] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, a: f64) -> GridField {
        self.map(|v| a * v)
    }

    /// Node-quadrature integral: every node carries weight `dx^2`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Neighbourhood of an interior node.
    pub fn stencil(&self, i: usize, j: usize) -> Result<Stencil> {
        if !self.grid.is_interior(i, j) {
            return Err(Error::Stencil { i, j });
        }
        Ok(self.stencil_unchecked(i, j))
    }

    #[inline]
    pub(crate) fn stencil_unchecked(&self, i: usize, j: usize) -> Stencil {
        let n1 = self.grid.n1;
        let k = self.grid.index(i, j);
        let v = &self.values;
        Stencil {
            c: v[k],
            e: v[k + 1],
            w: v[k - 1],
            n: v[k + n1],
            s: v[k - n1],
            ne: v[k + n1 + 1],
            nw: v[k + n1 - 1],
            se: v[k - n1 + 1],
            sw: v[k - n1 - 1],
        }
    }

    pub fn d_x1x1(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.stencil(i, j)?.d_x1x1(self.grid.dx))
    }

    pub fn d_x2x2(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.stencil(i, j)?.d_x2x2(self.grid.dx))
    }

    pub fn d_x1(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.stencil(i, j)?.d_x1(self.grid.dx))
    }

    pub fn d_x2(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.stencil(i, j)?.d_x2(self.grid.dx))
    }

    pub fn d_vv(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.stencil(i, j)?.d_vv(self.grid.dx))
    }

    pub fn d_vpvp(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.stencil(i, j)?.d_vpvp(self.grid.dx))
    }

    pub fn d_v(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.stencil(i, j)?.d_v(self.grid.dx))
    }

    pub fn d_vp(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.stencil(i, j)?.d_vp(self.grid.dx))
    }

    /// Gradient by centred differences in the interior and one-sided
    /// first-order differences on the boundary (pointing inward).
    pub fn gradient(&self, i: usize, j: usize) -> (f64, f64) {
        let g = &self.grid;
        let dx = g.dx;
        let d1 = if i == 0 {
            (self.get(1, j) - self.get(0, j)) / dx
        } else if i + 1 == g.n1 {
            (self.get(i, j) - self.get(i - 1, j)) / dx
        } else {
            (self.get(i + 1, j) - self.get(i - 1, j)) / (2.0 * dx)
        };
        let d2 = if j == 0 {
            (self.get(i, 1) - self.get(i, 0)) / dx
        } else if j + 1 == g.n2 {
            (self.get(i, j) - self.get(i, j - 1)) / dx
        } else {
            (self.get(i, j + 1) - self.get(i, j - 1)) / (2.0 * dx)
        };
        (d1, d2)
    }

    /// Copy of nodes `i0..=i1`, `j0..=j1`.
    pub fn crop(&self, i0: usize, i1: usize, j0: usize, j1: usize) -> Result<GridField> {
        let grid = self.grid.subgrid(i0, i1, j0, j1)?;
        let mut values = Vec::with_capacity(grid.len());
        for j in j0..=j1 {
            for i in i0..=i1 {
                values.push(self.get(i, j));
            }
        }
        Ok(GridField { grid, values })
    }

    /// Surround the field with `cells` rings of zeros.
    pub fn pad(&self, cells: usize) -> GridField {
        let g = &self.grid;
        let off = cells as f64 * g.dx;
        let grid = Grid2D::with_spacing(g.n1 + 2 * cells, g.n2 + 2 * cells, g.x1_min - off, g.x2_min - off, g.dx)
            .expect("padding a valid grid");
        let mut out = GridField::zeros(grid);
        for j in 0..g.n2 {
            for i in 0..g.n1 {
                out.set(i + cells, j + cells, self.get(i, j));
            }
        }
        out
    }

    /// Bilinear interpolation with the query clamped to the grid extents.
    pub fn interpolate(&self, x1: f64, x2: f64) -> f64 {
        let g = &self.grid;
        let (i, s) = cell_coord(x1, g.x1_min, g.dx, g.n1);
        let (j, t) = cell_coord(x2, g.x2_min, g.dx, g.n2);
        let v00 = self.get(i, j);
        let v10 = self.get(i + 1, j);
        let v01 = self.get(i, j + 1);
        let v11 = self.get(i + 1, j + 1);
        (1.0 - t) * ((1.0 - s) * v00 + s * v10) + t * ((1.0 - s) * v01 + s * v11)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.grid;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            g.n1,
            g.n2,
            fmt17(g.x1_min),
            fmt17(g.x1_max),
            fmt17(g.x2_min),
            fmt17(g.x2_max)
        )?;
        let mut line = String::new();
        for j in 0..g.n2 {
            line.clear();
            for i in 0..g.n1 {
                if i > 0 {
                    line.push(',');
                }
                let _ = write!(line, "{}", fmt17(self.get(i, j)));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<GridField> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty input".into() })?;
        let header = header?;
        let parts: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        if parts.len() != 6 {
            return Err(Error::Parse { line: 1, msg: format!("expected 6 header fields, got {}", parts.len()) });
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>().map_err(|e| Error::Parse { line: 1, msg: format!("{s:?}: {e}") })
        };
        let n1 = parse_usize(parts[0])?;
        let n2 = parse_usize(parts[1])?;
        let mut ext = [0.0; 4];
        for (k, p) in parts[2..].iter().enumerate() {
            ext[k] = parse_f64(p, 1)?;
        }
        let grid = Grid2D::new(n1, n2, ext[0], ext[1], ext[2], ext[3])
            .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
        let mut values = Vec::with_capacity(grid.len());
        let mut rows = 0;
        for (k, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = k + 1;
            if rows == n2 {
                return Err(Error::Parse { line: lineno, msg: "more rows than declared".into() });
            }
            let before = values.len();
            for tok in line.trim().split(',') {
                values.push(parse_f64(tok.trim(), lineno)?);
            }
            if values.len() - before != n1 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {n1} values, got {}", values.len() - before),
                });
            }
            rows += 1;
        }
        if rows != n2 {
            return Err(Error::Parse { line: rows + 2, msg: format!("expected {n2} rows, got {rows}") });
        }
        GridField::new(grid, values)
    }
}

/// Cell index and fractional offset of `x` along one axis, clamped.
#[inline]
pub(crate) fn cell_coord(x: f64, min: f64, dx: f64, n: usize) -> (usize, f64) {
    let r = ((x - min) / dx).clamp(0.0, (n - 1) as f64);
    let i = (r.floor() as usize).min(n - 2);
    (i, r - i as f64)
}

pub(crate) fn parse_f64(s: &str, line: usize) -> Result<f64> {
    let v: f64 = s.parse().map_err(|e| Error::Parse { line, msg: format!("{s:?}: {e}") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, msg: format!("non-finite value {s:?}") });
    }
    Ok(v)
}

/// Seventeen significant digits, enough to round-trip an f64.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
