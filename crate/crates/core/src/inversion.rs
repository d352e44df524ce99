//! Misfit experiments on synthetic panels: cross-section scans of the
//! W2 and L2 misfits, Nelder-Mead parameter recovery, and the 1D wavelet
//! shift sweep with optional noise.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fmt17, GridField};
use crate::preprocess::{signed_half_cells, PreprocessConfig, SignedSignal};
use crate::seismic::{synthesize_panel, wavelet_profile, AcquisitionGeometry, LayerModel, Noisy, Param, WaveletGeometry};
use crate::solver::SolverConfig;
use crate::transport1d::{l2_1d, signed_w2_1d};
use crate::transport2d::{l2_squared, w2_signed};

/// Everything a misfit evaluation needs besides the two models.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MisfitConfig {
    pub geometry: AcquisitionGeometry,
    pub preprocess: PreprocessConfig,
    pub solver: SolverConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Misfit {
    pub w2_sq: f64,
    pub l2_sq: f64,
}

/// W2 and L2 misfits between the panel of `trial` and `panel_ref`.
/// Failures carry the trial parameters.
pub fn misfit(trial: &LayerModel, panel_ref: &GridField, cfg: &MisfitConfig) -> Result<Misfit> {
    let wrap = |e: Error| Error::Trial { model: trial.to_json(), source: Box::new(e) };
    let panel = synthesize_panel(trial, &cfg.geometry).map_err(wrap)?;
    let l2_sq = l2_squared(&panel, panel_ref).map_err(wrap)?;
    let w2 = w2_signed(&SignedSignal(panel), &SignedSignal(panel_ref.clone()), &cfg.preprocess, &cfg.solver)
        .map_err(wrap)?;
    Ok(Misfit { w2_sq: w2.w2_squared, l2_sq })
}

/// `count` equally spaced values of one parameter, endpoints included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanAxis {
    pub param: Param,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl ScanAxis {
    pub fn new(param: Param, min: f64, max: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidParameter("scan axis needs at least one sample".into()));
        }
        if !(min.is_finite() && max.is_finite() && min <= max) || (count > 1 && min == max) {
            return Err(Error::InvalidParameter(format!("bad scan range [{min}, {max}] for {}", param.name())));
        }
        Ok(ScanAxis { param, min, max, count })
    }

    pub fn value(&self, k: usize) -> f64 {
        if self.count == 1 {
            self.min
        } else {
            self.min + (self.max - self.min) * k as f64 / (self.count - 1) as f64
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.value(k)).collect()
    }
}

/// Misfits on the tensor grid of two parameter axes; the other two
/// parameters come from `base`. Failed cells are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MisfitSurface {
    pub axis1: ScanAxis,
    pub axis2: ScanAxis,
    pub base: LayerModel,
    /// Row-major in `(axis1, axis2)`.
    pub l2_values: Vec<Option<f64>>,
    pub w2_values: Vec<Option<f64>>,
}

impl MisfitSurface {
    fn index(&self, a: usize, b: usize) -> usize {
        a * self.axis2.count + b
    }

    pub fn w2(&self, a: usize, b: usize) -> Option<f64> {
        self.w2_values[self.index(a, b)]
    }

    pub fn l2(&self, a: usize, b: usize) -> Option<f64> {
        self.l2_values[self.index(a, b)]
    }

    pub fn failed_cells(&self) -> usize {
        self.w2_values.iter().filter(|v| v.is_none()).count()
    }

    /// Cell of the smallest W2 value.
    pub fn argmin_w2(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, f64)> = None;
        for (k, v) in self.w2_values.iter().enumerate() {
            if let Some(v) = *v {
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((k, v));
                }
            }
        }
        best.map(|(k, _)| (k / self.axis2.count, k % self.axis2.count))
    }

    /// The same surface with the axes swapped.
    pub fn transpose(&self) -> MisfitSurface {
        let (n1, n2) = (self.axis1.count, self.axis2.count);
        let t = |v: &[Option<f64>]| (0..n2).flat_map(|b| (0..n1).map(move |a| v[a * n2 + b])).collect();
        MisfitSurface {
            axis1: self.axis2,
            axis2: self.axis1,
            base: self.base,
            l2_values: t(&self.l2_values),
            w2_values: t(&self.w2_values),
        }
    }

    /// The W2 and L2 curves along axis 1 at a fixed axis-2 index.
    pub fn section(&self, b: usize) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
        (0..self.axis1.count).map(|a| (self.w2(a, b), self.l2(a, b))).unzip()
    }

    /// CSV with columns `p1,p2,l2_sq,w2_sq`; failed cells hold `NaN`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "p1,p2,l2_sq,w2_sq")?;
        let cell = |v: Option<f64>| v.map_or_else(|| "NaN".to_string(), fmt17);
        for a in 0..self.axis1.count {
            for b in 0..self.axis2.count {
                writeln!(
                    w,
                    "{},{},{},{}",
                    fmt17(self.axis1.value(a)),
                    fmt17(self.axis2.value(b)),
                    cell(self.l2(a, b)),
                    cell(self.w2(a, b))
                )?;
            }
        }
        Ok(())
    }
}

/// Evaluate [`misfit`] on every cell of `axis1 x axis2`. Cells run on a
/// pool of `jobs` threads (0 = all cores); results do not depend on it.
pub fn scan_surface(
    axis1: ScanAxis,
    axis2: ScanAxis,
    base: &LayerModel,
    panel_ref: &GridField,
    cfg: &MisfitConfig,
    jobs: usize,
) -> Result<MisfitSurface> {
    if axis1.param == axis2.param {
        return Err(Error::InvalidParameter(format!("both scan axes are {}", axis1.param.name())));
    }
    let cells: Vec<(usize, usize)> =
        (0..axis1.count).flat_map(|a| (0..axis2.count).map(move |b| (a, b))).collect();
    let model = |&(a, b): &(usize, usize)| base.with(axis1.param, axis1.value(a)).with(axis2.param, axis2.value(b));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let models: Vec<LayerModel> = cells.iter().map(model).collect();
    let cfg = pool.install(|| with_common_rectangles(&models, panel_ref, cfg));
    let eval = |m: &LayerModel| -> Option<Misfit> {
        m.validate().ok()?;
        misfit(m, panel_ref, &cfg).ok()
    };
    let results: Vec<Option<Misfit>> = pool.install(|| models.par_iter().map(eval).collect());
    Ok(MisfitSurface {
        axis1,
        axis2,
        base: *base,
        l2_values: results.iter().map(|m| m.map(|m| m.l2_sq)).collect(),
        w2_values: results.iter().map(|m| m.map(|m| m.w2_sq)).collect(),
    })
}

/// `cfg` with the rectangle floor raised to the largest half-widths any of
/// `models` needs against `panel_ref`, so all trials share one rectangle
/// size and the misfit varies smoothly across them. Models that cannot be
/// synthesised or prepared are skipped.
pub fn with_common_rectangles(models: &[LayerModel], panel_ref: &GridField, cfg: &MisfitConfig) -> MisfitConfig {
    let reference = SignedSignal(panel_ref.clone());
    let (h1, h2) = models
        .par_iter()
        .filter_map(|m| {
            let panel = synthesize_panel(m, &cfg.geometry).ok()?;
            signed_half_cells(&SignedSignal(panel), &reference, &cfg.preprocess).ok()
        })
        .reduce(|| (0, 0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    let mut out = cfg.clone();
    let old = cfg.preprocess.min_half_cells.unwrap_or((0, 0));
    out.preprocess.min_half_cells = Some((old.0.max(h1), old.1.max(h2)));
    out
}

/// Shape of a 1D misfit curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurveShape {
    pub argmin: usize,
    /// Nonincreasing up to the minimum and nondecreasing after it.
    pub unimodal: bool,
    /// Smallest discrete second difference over interior samples.
    pub min_second_difference: f64,
}

pub fn curve_shape(v: &[f64]) -> Result<CurveShape> {
    if v.len() < 3 || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("curve needs at least three finite samples".into()));
    }
    let argmin = (0..v.len()).fold(0, |m, k| if v[k] < v[m] { k } else { m });
    let unimodal = v[..=argmin].windows(2).all(|w| w[1] <= w[0]) && v[argmin..].windows(2).all(|w| w[1] >= w[0]);
    let min_second_difference =
        v.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).fold(f64::INFINITY, f64::min);
    Ok(CurveShape { argmin, unimodal, min_second_difference })
}

/// The W2/L2 landscape contrast along one section: the W2 curve is
/// unimodal with no negative second difference, and the L2 curve has one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LandscapeContrast {
    pub w2: CurveShape,
    pub l2: CurveShape,
    pub holds: bool,
}

pub fn landscape_contrast(w2: &[f64], l2: &[f64]) -> Result<LandscapeContrast> {
    let w = curve_shape(w2)?;
    let l = curve_shape(l2)?;
    let holds = w.unimodal && w.min_second_difference >= 0.0 && l.min_second_difference < 0.0;
    Ok(LandscapeContrast { w2: w, l2: l, holds })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    /// Stop when every vertex lies within this max-norm distance of the best.
    pub xtol: f64,
    /// Stop when the objective values of the simplex differ by less than this.
    pub ftol: f64,
    pub max_evals: usize,
    /// Relative size of the initial simplex (absolute for zero coordinates).
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { xtol: 1e-3, ftol: 1e-6, max_evals: 500, initial_step: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadResult {
    pub x_min: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Nelder-Mead simplex minimisation with reflection 1, expansion 2,
/// contraction 1/2 and shrink 1/2. Non-finite objective values count as
/// `+inf`, except at the initial simplex, where they are an error.
pub fn nelder_mead(
    mut objective: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> Result<NelderMeadResult> {
    let n = x0.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty starting point".into()));
    }
    let mut evals = 0;
    let mut f = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = objective(x);
        if v.is_finite() { v } else { f64::INFINITY }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let mut x = x0.to_vec();
        if k > 0 {
            let step = if x[k - 1] != 0.0 { opts.initial_step * x[k - 1] } else { opts.initial_step };
            x[k - 1] += step;
        }
        let v = f(&x, &mut evals);
        if !v.is_finite() {
            return Err(Error::InvalidParameter(format!("objective is not finite at initial vertex {x:?}")));
        }
        simplex.push((x, v));
    }
    let point = |c: &[f64], d: &[f64], t: f64| -> Vec<f64> { c.iter().zip(d).map(|(a, b)| a + t * (b - a)).collect() };
    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0];
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let spread = simplex[n].1 - simplex[0].1;
        if diameter < opts.xtol || spread < opts.ftol {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let xr = point(&centroid, &worst.0, -1.0);
        let fr = f(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = point(&centroid, &worst.0, -2.0);
            let fe = f(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        // Outside contraction toward the reflected point, inside otherwise.
        let (xc, fc) = if fr < worst.1 {
            let xc = point(&centroid, &xr, 0.5);
            let fc = f(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = point(&centroid, &worst.0, 0.5);
            let fc = f(&xc, &mut evals);
            (xc, fc)
        };
        if fc < fr.min(worst.1) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x = point(&x_best, &vertex.0, 0.5);
            let v = f(&x, &mut evals);
            *vertex = (x, v);
        }
    }
    let (x_min, value) = simplex.swap_remove(0);
    Ok(NelderMeadResult { x_min, value, evals, converged })
}

/// Recover layer parameters by minimising the W2 misfit to `panel_ref`
/// from `start`. Trials that fail to synthesise or solve score `+inf`.
pub fn invert(
    start: &LayerModel,
    panel_ref: &GridField,
    cfg: &MisfitConfig,
    opts: &NelderMeadOptions,
) -> Result<NelderMeadResult> {
    let objective = |p: &[f64]| match LayerModel::from_slice(p) {
        Ok(m) => misfit(&m, panel_ref, cfg).map_or(f64::INFINITY, |r| r.w2_sq),
        Err(_) => f64::INFINITY,
    };
    nelder_mead(objective, &start.to_array(), opts)
}

/// Which signals of the wavelet sweep carry noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    None,
    Source,
    Both,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseMode::None),
            "source" => Ok(NoiseMode::Source),
            "both" => Ok(NoiseMode::Both),
            _ => Err(Error::InvalidParameter(format!("noise mode {s:?}; expected none, source or both"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseOptions {
    pub mode: NoiseMode,
    /// Noise amplitude relative to `max |f|`.
    pub amplitude_rel: f64,
    pub seed: u64,
}

impl Default for NoiseOptions {
    fn default() -> Self {
        NoiseOptions { mode: NoiseMode::None, amplitude_rel: 0.1, seed: 42 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub s: f64,
    pub l2_sq: f64,
    pub w2_sq: f64,
}

/// Misfits between the wavelet `f` and its shifts `g = f(x - s)`. The
/// source noise uses `seed`; the target at shift index `k` uses
/// `seed + 1 + k`.
pub fn wavelet_sweep(geom: &WaveletGeometry, shifts: &[f64], noise: &NoiseOptions) -> Result<Vec<SweepRow>> {
    let f = wavelet_profile(geom, 0.0)?;
    let amp = noise.amplitude_rel * f.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let f = match noise.mode {
        NoiseMode::None => f,
        NoiseMode::Source | NoiseMode::Both => f.add_noise(amp, noise.seed),
    };
    shifts
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let mut g = wavelet_profile(geom, s)?;
            if noise.mode == NoiseMode::Both {
                g = g.add_noise(amp, noise.seed.wrapping_add(1 + k as u64));
            }
            Ok(SweepRow { s, l2_sq: l2_1d(&f, &g)?, w2_sq: signed_w2_1d(&f, &g)? })
        })
        .collect()
}

/// CSV with columns `s,l2_sq,w2_sq`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "s,l2_sq,w2_sq")?;
    for r in rows {
        writeln!(w, "{},{},{}", fmt17(r.s), fmt17(r.l2_sq), fmt17(r.w2_sq))?;
    }
    Ok(())
}
