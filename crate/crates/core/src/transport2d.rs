//! Post-processing of a converged potential: the squared Wasserstein
//! distance, the displacement field `grad u(x) - x` and `det D^2 u`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{fmt17, Grid2D, GridField};
use crate::preprocess::{prepare_signed, DensityPair, PreprocessConfig, SignedSignal};
use crate::solver::{solve_monge_ampere, Potential, SolverConfig, SolverReport};

/// Squared transport cost `int |x - grad u(x)|^2 f(x) dx` over the source
/// rectangle, by the trapezoidal rule.
pub fn w2_from_potential(u: &Potential, pair: &DensityPair) -> f64 {
    let g = u.u.grid();
    let r = pair.x_rect;
    let mut s = 0.0;
    for j in 0..g.n2 {
        for i in 0..g.n1 {
            let (x1, x2) = g.position(i, j);
            let (p1, p2) = u.gradient(i, j);
            let f = pair.f.get(i + r.i0, j + r.j0) * r.weight(i + r.i0, j + r.j0);
            s += ((x1 - p1).powi(2) + (x2 - p2).powi(2)) * f;
        }
    }
    s * g.cell_area()
}

#[derive(Clone, Debug)]
pub struct TransportResult {
    pub w2_squared: f64,
    /// Grid of the source rectangle.
    pub grid: Grid2D,
    /// `grad u(x) - x` per node, in grid order.
    pub displacement: Vec<(f64, f64)>,
    /// Source density per node, in grid order.
    pub f_values: Vec<f64>,
    pub thresholded: bool,
}

/// Displacement `grad u(x) - x` on the source rectangle. With
/// `threshold_layer`, vectors in the artificial layer (where the source
/// density before padding was below `theta / 2`) are set to zero.
pub fn displacement_field(u: &Potential, pair: &DensityPair, threshold_layer: bool) -> TransportResult {
    let g = *u.u.grid();
    let r = pair.x_rect;
    let full = pair.grid();
    let mut displacement = Vec::with_capacity(g.len());
    let mut f_values = Vec::with_capacity(g.len());
    for j in 0..g.n2 {
        for i in 0..g.n1 {
            let (x1, x2) = g.position(i, j);
            let (p1, p2) = u.gradient(i, j);
            let k = full.index(i + r.i0, j + r.j0);
            let d = if threshold_layer && pair.layer[k] { (0.0, 0.0) } else { (p1 - x1, p2 - x2) };
            displacement.push(d);
            f_values.push(pair.f.values()[k]);
        }
    }
    TransportResult {
        w2_squared: w2_from_potential(u, pair),
        grid: g,
        displacement,
        f_values,
        thresholded: threshold_layer,
    }
}

impl TransportResult {
    /// CSV with columns `x1,x2,d1,d2,f_value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x1,x2,d1,d2,f_value")?;
        let g = &self.grid;
        for j in 0..g.n2 {
            for i in 0..g.n1 {
                let k = g.index(i, j);
                let (x1, x2) = g.position(i, j);
                let (d1, d2) = self.displacement[k];
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    fmt17(x1),
                    fmt17(x2),
                    fmt17(d1),
                    fmt17(d2),
                    fmt17(self.f_values[k])
                )?;
            }
        }
        Ok(())
    }
}

/// `det D^2 u` by centred differences on the interior nodes, returned on
/// the grid of interior nodes.
pub fn registered_amplitude(u: &Potential) -> Result<GridField> {
    let g = u.u.grid();
    let inner = g.subgrid(1, g.n1 - 2, 1, g.n2 - 2).map_err(|_| {
        Error::InvalidGrid("potential needs at least 3 interior nodes per axis".into())
    })?;
    let dx = g.dx;
    let mut vals = Vec::with_capacity(inner.len());
    for j in 1..g.n2 - 1 {
        for i in 1..g.n1 - 1 {
            let s = u.u.stencil(i, j)?;
            vals.push(s.d_x1x1(dx) * s.d_x2x2(dx) - s.d_x1x2(dx).powi(2));
        }
    }
    GridField::new(inner, vals)
}

/// Weak pushforward defect `sum phi(grad u) f - sum phi(y) g`.
pub fn pushforward_defect(u: &Potential, pair: &DensityPair, phi: impl Fn(f64, f64) -> f64) -> f64 {
    let g = u.u.grid();
    let r = pair.x_rect;
    let mut lhs = 0.0;
    for j in 0..g.n2 {
        for i in 0..g.n1 {
            let (p1, p2) = u.gradient(i, j);
            lhs += phi(p1, p2) * pair.f.get(i + r.i0, j + r.j0) * r.weight(i + r.i0, j + r.j0);
        }
    }
    let full = pair.grid();
    let mut rhs = 0.0;
    for j in 0..full.n2 {
        for i in 0..full.n1 {
            let v = pair.g.get(i, j) * pair.y_rect.weight(i, j);
            if v != 0.0 {
                let (y1, y2) = full.position(i, j);
                rhs += phi(y1, y2) * v;
            }
        }
    }
    (lhs - rhs) * full.cell_area()
}

/// Node-quadrature `sum (f - g)^2 dx^2`.
pub fn l2_squared(f: &GridField, g: &GridField) -> Result<f64> {
    if !f.grid().same_shape(g.grid()) {
        return Err(Error::GridMismatch);
    }
    let s: f64 = f.values().iter().zip(g.values()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(s * f.grid().cell_area())
}

/// One solved part of a signed comparison.
#[derive(Clone, Debug)]
pub struct PartSolution {
    pub pair: DensityPair,
    pub potential: Potential,
    pub report: SolverReport,
    pub w2_squared: f64,
}

#[derive(Clone, Debug)]
pub struct SignedTransport {
    /// `W2^2(f+, g+) + W2^2(f-, g-)`.
    pub w2_squared: f64,
    pub plus: Option<PartSolution>,
    pub minus: Option<PartSolution>,
}

#[derive(Serialize)]
struct PartSummary<'a> {
    w2_squared: f64,
    report: &'a SolverReport,
}

impl SignedTransport {
    pub fn reports(&self) -> impl Iterator<Item = &SolverReport> {
        self.plus.iter().chain(self.minus.iter()).map(|p| &p.report)
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let part = |p: &Option<PartSolution>| {
            p.as_ref()
                .map(|s| serde_json::to_value(PartSummary { w2_squared: s.w2_squared, report: &s.report }).unwrap())
                .unwrap_or(serde_json::Value::Null)
        };
        serde_json::json!({ "plus": part(&self.plus), "minus": part(&self.minus) })
    }
}

/// Solve one prepared pair.
pub fn solve_pair(pair: DensityPair, cfg: &SolverConfig) -> Result<PartSolution> {
    let (potential, report) = solve_monge_ampere(&pair, cfg)?;
    let w2_squared = w2_from_potential(&potential, &pair);
    Ok(PartSolution { pair, potential, report, w2_squared })
}

/// Signed misfit between two raw signals: split, prepare and solve each
/// part, and add the two costs.
pub fn w2_signed(
    f: &SignedSignal,
    g: &SignedSignal,
    pre: &PreprocessConfig,
    cfg: &SolverConfig,
) -> Result<SignedTransport> {
    let parts = prepare_signed(f, g, pre)?;
    let plus = parts.plus.map(|p| solve_pair(p, cfg)).transpose()?;
    let minus = parts.minus.map(|p| solve_pair(p, cfg)).transpose()?;
    let w2_squared = plus.as_ref().map_or(0.0, |p| p.w2_squared) + minus.as_ref().map_or(0.0, |p| p.w2_squared);
    Ok(SignedTransport { w2_squared, plus, minus })
}
