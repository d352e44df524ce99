//! Synthetic data: offset-time panels of a two-layer medium from a
//! convolutional model with Ricker wavelets, 1D wavelet profiles, and
//! seeded uniform noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, GridField};
use crate::transport1d::Signal1D;

/// Two layers over a half-space: thicknesses and wave speeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerModel {
    pub d1: f64,
    pub d2: f64,
    pub v1: f64,
    pub v2: f64,
}

impl LayerModel {
    pub const REFERENCE: LayerModel = LayerModel { d1: 1.0, d2: 0.5, v1: 1.0, v2: 1.5 };

    pub fn new(d1: f64, d2: f64, v1: f64, v2: f64) -> Result<Self> {
        let m = LayerModel { d1, d2, v1, v2 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("d1", self.d1), ("d2", self.d2), ("v1", self.v1), ("v2", self.v2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Parameters in the order `(d1, d2, v1, v2)`.
    pub fn to_array(&self) -> [f64; 4] {
        [self.d1, self.d2, self.v1, self.v2]
    }

    pub fn from_slice(p: &[f64]) -> Result<Self> {
        match p {
            [d1, d2, v1, v2] => Self::new(*d1, *d2, *v1, *v2),
            _ => Err(Error::InvalidParameter(format!("expected 4 layer parameters, got {}", p.len()))),
        }
    }

    pub fn get(&self, name: Param) -> f64 {
        self.to_array()[name as usize]
    }

    pub fn with(&self, name: Param, value: f64) -> LayerModel {
        let mut a = self.to_array();
        a[name as usize] = value;
        LayerModel { d1: a[0], d2: a[1], v1: a[2], v2: a[3] }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: LayerModel = serde_json::from_str(s).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
        m.validate()?;
        Ok(m)
    }
}

/// Model parameter names, in array order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    D1 = 0,
    D2 = 1,
    V1 = 2,
    V2 = 3,
}

impl Param {
    pub const ALL: [Param; 4] = [Param::D1, Param::D2, Param::V1, Param::V2];

    pub fn name(self) -> &'static str {
        ["d1", "d2", "v1", "v2"][self as usize]
    }
}

impl std::str::FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Param::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown parameter {s:?}; expected d1, d2, v1 or v2")))
    }
}

/// `count` cells covering `[min, max]`, sampled at the cell centres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AxisRange {
    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / self.count as f64
    }

    pub fn sample(&self, k: usize) -> f64 {
        self.min + (k as f64 + 0.5) * self.spacing()
    }

    pub fn first(&self) -> f64 {
        self.sample(0)
    }

    pub fn last(&self) -> f64 {
        self.sample(self.count - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionGeometry {
    pub offsets: AxisRange,
    pub times: AxisRange,
    pub wavelet_peak_freq: f64,
}

impl Default for AcquisitionGeometry {
    /// 64 offsets over `[0, 3]` and 128 times over `[0, 6]`: square cells,
    /// and room for both events of every model in the default scans.
    fn default() -> Self {
        AcquisitionGeometry {
            offsets: AxisRange { min: 0.0, max: 3.0, count: 64 },
            times: AxisRange { min: 0.0, max: 6.0, count: 128 },
            wavelet_peak_freq: 2.0,
        }
    }
}

impl AcquisitionGeometry {
    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("offsets", self.offsets), ("times", self.times)] {
            if a.count < 16 {
                return Err(Error::InvalidParameter(format!("{name} need at least 16 samples, got {}", a.count)));
            }
            if !(a.max > a.min && a.min.is_finite() && a.max.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} range [{}, {}] is empty", a.min, a.max)));
            }
        }
        if self.offsets.min < 0.0 {
            return Err(Error::InvalidParameter("offsets must be nonnegative".into()));
        }
        if !(self.wavelet_peak_freq > 0.0) {
            return Err(Error::InvalidParameter("wavelet peak frequency must be positive".into()));
        }
        self.grid().map(|_| ())
    }

    /// Node grid with offset along the first axis and time along the second.
    pub fn grid(&self) -> Result<Grid2D> {
        let (o, t) = (self.offsets, self.times);
        Grid2D::new(o.count, t.count, o.first(), o.last(), t.first(), t.last())
    }
}

/// Reflection traveltimes of the two interfaces at one offset: a straight
/// ray for the first, hyperbolic moveout with the RMS velocity for the second.
pub fn traveltimes(model: &LayerModel, offset: f64) -> (f64, f64) {
    let LayerModel { d1, d2, v1, v2 } = *model;
    let t1 = 2.0 * (d1 * d1 + 0.25 * offset * offset).sqrt() / v1;
    let (a, b) = (2.0 * d1 / v1, 2.0 * d2 / v2);
    let t02 = a + b;
    let vrms2 = (v1 * v1 * a + v2 * v2 * b) / t02;
    let t2 = (t02 * t02 + offset * offset / vrms2).sqrt();
    (t1, t2)
}

/// `(1 - 2 pi^2 nu^2 t^2) exp(-pi^2 nu^2 t^2)`.
pub fn ricker(t: f64, nu: f64) -> f64 {
    let a = (std::f64::consts::PI * nu * t).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// `(R1, R2)`: the first interface's impedance contrast at equal
/// densities, and the second event's amplitude after two-way transmission.
pub fn reflection_coefficients(model: &LayerModel) -> (f64, f64) {
    let r1 = (model.v2 - model.v1) / (model.v2 + model.v1);
    (r1, 0.5 * (1.0 - r1 * r1))
}

/// Offset-time panel: every trace is the sum of the two reflections.
pub fn synthesize_panel(model: &LayerModel, geom: &AcquisitionGeometry) -> Result<GridField> {
    model.validate()?;
    geom.validate()?;
    let grid = geom.grid()?;
    let (t_lo, t_hi) = (geom.times.min, geom.times.max);
    let times: Vec<(f64, f64)> = (0..geom.offsets.count).map(|k| traveltimes(model, geom.offsets.sample(k))).collect();
    for &(t1, t2) in &times {
        for t in [t1, t2] {
            if !(t_lo..=t_hi).contains(&t) {
                return Err(Error::EventOutsideWindow { time: t });
            }
        }
    }
    let (r1, r2) = reflection_coefficients(model);
    let nu = geom.wavelet_peak_freq;
    let mut values = vec![0.0; grid.len()];
    for (i, &(t1, t2)) in times.iter().enumerate() {
        for j in 0..grid.n2 {
            let t = geom.times.sample(j);
            values[grid.index(i, j)] = r1 * ricker(t - t1, nu) + r2 * ricker(t - t2, nu);
        }
    }
    GridField::new(grid, values)
}

/// Sampling of the 1D wavelet profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveletGeometry {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    pub peak_freq: f64,
}

impl Default for WaveletGeometry {
    fn default() -> Self {
        WaveletGeometry { x_min: -4.0, x_max: 4.0, n: 801, peak_freq: 1.0 }
    }
}

/// Ricker wavelet centred at `shift`.
pub fn wavelet_profile(geom: &WaveletGeometry, shift: f64) -> Result<Signal1D> {
    if !(geom.peak_freq > 0.0) {
        return Err(Error::InvalidParameter("wavelet peak frequency must be positive".into()));
    }
    Signal1D::from_fn(geom.n, geom.x_min, geom.x_max, |x| ricker(x - shift, geom.peak_freq))
}

/// `n` independent draws, uniform on `[-amplitude, amplitude]`.
pub fn uniform_noise(n: usize, amplitude: f64, seed: u64) -> Vec<f64> {
    if amplitude == 0.0 {
        return vec![0.0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-amplitude..=amplitude)).collect()
}

/// Values that can carry additive noise.
pub trait Noisy: Sized {
    fn add_noise(&self, amplitude: f64, seed: u64) -> Self;
}

impl Noisy for GridField {
    fn add_noise(&self, amplitude: f64, seed: u64) -> Self {
        let h = uniform_noise(self.values().len(), amplitude, seed);
        let vals = self.values().iter().zip(h).map(|(v, e)| v + e).collect();
        GridField::new(*self.grid(), vals).expect("finite values stay finite")
    }
}

impl Noisy for Signal1D {
    fn add_noise(&self, amplitude: f64, seed: u64) -> Self {
        let h = uniform_noise(self.n(), amplitude, seed);
        Signal1D::new(self.x_min, self.x_max, self.values().iter().zip(h).map(|(v, e)| v + e).collect())
            .expect("finite values stay finite")
    }
}

/// Free-function form of [`Noisy::add_noise`].
pub fn add_noise<T: Noisy>(field: &T, amplitude: f64, seed: u64) -> T {
    field.add_noise(amplitude, seed)
}
