//! Piecewise-constant functions on the dyadic partition of `[0, 1)`.
//!
//! A function of resolution `D` takes the value `values[k]` on the cell
//! `[k 2^-D, (k+1) 2^-D)`. Every integral, inner product and norm used by the
//! estimators is then a finite sum, so these are computed exactly (up to
//! floating point) rather than by quadrature.

use std::fmt::Write as _;
use std::ops::Deref;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Tolerance on the total mass of a [`DensityGrid`].
pub const MASS_TOL: f64 = 1e-12;

/// A signed piecewise-constant function on the dyadic grid of `2^resolution` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    resolution: u32,
    values: Vec<f64>,
}

impl GridFn {
    pub fn new(resolution: u32, values: Vec<f64>) -> Result<Self> {
        if resolution > 30 {
            return Err(Error::param("resolution", format!("{resolution} is above 30")));
        }
        if values.len() != 1usize << resolution {
            return Err(Error::param(
                "values",
                format!("expected {} cells, got {}", 1usize << resolution, values.len()),
            ));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param("values", format!("non-finite value at cell {k}")));
        }
        Ok(GridFn { resolution, values })
    }

    pub fn constant(resolution: u32, value: f64) -> Self {
        GridFn {
            resolution,
            values: vec![value; 1usize << resolution],
        }
    }

    pub fn zeros(resolution: u32) -> Self {
        Self::constant(resolution, 0.0)
    }

    /// Samples `f` at the cell midpoints.
    pub fn from_midpoints(resolution: u32, f: impl Fn(f64) -> f64) -> Self {
        let cells = 1usize << resolution;
        let w = 1.0 / cells as f64;
        let values = (0..cells).map(|k| f((k as f64 + 0.5) * w)).collect();
        GridFn { resolution, values }
    }

    /// The level-0 Haar mother wavelet: `+1` on `[0, 1/2)`, `-1` on `[1/2, 1)`.
    pub fn haar_step(resolution: u32) -> Self {
        assert!(resolution >= 1, "the Haar step needs at least two cells");
        let cells = 1usize << resolution;
        let values = (0..cells).map(|k| if k < cells / 2 { 1.0 } else { -1.0 }).collect();
        GridFn { resolution, values }
    }

    #[inline]
    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn cell_width(&self) -> f64 {
        1.0 / self.values.len() as f64
    }

    /// Index of the cell containing `y`. Points outside `[0, 1)` are clamped to the boundary cells.
    #[inline]
    pub fn cell_of(&self, y: f64) -> usize {
        cell_index(y, self.resolution)
    }

    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        self.values[self.cell_of(y)]
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_width()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Exact `L^2[0,1]` inner product; the coarser operand is refined first.
    pub fn inner(&self, other: &GridFn) -> f64 {
        let res = self.resolution.max(other.resolution);
        let a_shift = res - self.resolution;
        let b_shift = res - other.resolution;
        let cells = 1usize << res;
        let mut acc = 0.0;
        for k in 0..cells {
            acc += self.values[k >> a_shift] * other.values[k >> b_shift];
        }
        acc / cells as f64
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Squared `L^2` distance, refining to the finer resolution.
    pub fn l2_dist_sq(&self, other: &GridFn) -> f64 {
        let res = self.resolution.max(other.resolution);
        let a = self.refined(res);
        let b = other.refined(res);
        a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / a.cells() as f64
    }

    /// The same function represented on the finer grid `resolution`.
    ///
    /// Panics if `resolution` is coarser than the current one.
    pub fn refined(&self, resolution: u32) -> GridFn {
        assert!(
            resolution >= self.resolution,
            "cannot refine from {} down to {}",
            self.resolution,
            resolution
        );
        if resolution == self.resolution {
            return self.clone();
        }
        let shift = resolution - self.resolution;
        let cells = 1usize << resolution;
        let values = (0..cells).map(|k| self.values[k >> shift]).collect();
        GridFn { resolution, values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFn {
        GridFn {
            resolution: self.resolution,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> GridFn {
        self.map(|v| a * v)
    }

    /// `a * self + b * other`, on the finer of the two grids.
    pub fn lin_comb(&self, a: f64, other: &GridFn, b: f64) -> GridFn {
        let res = self.resolution.max(other.resolution);
        let x = self.refined(res);
        let y = other.refined(res);
        let values = x.values.iter().zip(&y.values).map(|(u, v)| a * u + b * v).collect();
        GridFn { resolution: res, values }
    }

    pub fn max_abs_diff(&self, other: &GridFn) -> f64 {
        let res = self.resolution.max(other.resolution);
        let x = self.refined(res);
        let y = other.refined(res);
        x.values
            .iter()
            .zip(&y.values)
            .fold(0.0, |m, (u, v)| m.max((u - v).abs()))
    }

    /// Text record `{"D": .., "values": [..]}` with 17 significant digits per value.
    pub fn to_record(&self) -> String {
        let mut s = String::with_capacity(32 + 25 * self.values.len());
        write!(s, "{{\"D\": {}, \"values\": [", self.resolution).unwrap();
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            s.push_str(&fmt_f64(*v));
        }
        s.push_str("]}");
        s
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let raw: GridRecord = serde_json::from_str(text).map_err(|e| Error::Record(e.to_string()))?;
        GridFn::new(raw.d, raw.values)
    }
}

#[derive(Deserialize)]
struct GridRecord {
    #[serde(rename = "D")]
    d: u32,
    values: Vec<f64>,
}

/// Formats a float with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[inline]
pub(crate) fn cell_index(y: f64, resolution: u32) -> usize {
    let cells = 1usize << resolution;
    let k = (y * cells as f64).floor();
    if k <= 0.0 {
        0
    } else if k >= cells as f64 {
        cells - 1
    } else {
        k as usize
    }
}

/// A probability density that is piecewise constant on the dyadic grid.
///
/// Values are non-negative and integrate to one within [`MASS_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid(GridFn);

impl DensityGrid {
    pub fn new(resolution: u32, values: Vec<f64>) -> Result<Self> {
        Self::try_from(GridFn::new(resolution, values)?)
    }

    pub fn uniform(resolution: u32) -> Self {
        DensityGrid(GridFn::constant(resolution, 1.0))
    }

    /// Rescales non-negative weights so they integrate to one.
    pub fn normalized(resolution: u32, weights: Vec<f64>) -> Result<Self> {
        let g = GridFn::new(resolution, weights)?;
        let mass = g.integral();
        if !(mass > 0.0) {
            return Err(Error::InvalidDensity("weights have no positive mass".into()));
        }
        Self::try_from(g.scaled(1.0 / mass))
    }

    pub fn as_grid(&self) -> &GridFn {
        &self.0
    }

    pub fn into_grid(self) -> GridFn {
        self.0
    }

    /// Whether `max f <= bound`.
    pub fn bounded_by(&self, bound: f64) -> bool {
        self.0.max_value() <= bound
    }

    /// Probability mass of each cell.
    pub fn cell_masses(&self) -> Vec<f64> {
        let w = self.0.cell_width();
        self.0.values.iter().map(|v| v * w).collect()
    }

    pub fn refined(&self, resolution: u32) -> DensityGrid {
        DensityGrid(self.0.refined(resolution))
    }

    pub fn from_record(text: &str) -> Result<Self> {
        Self::try_from(GridFn::from_record(text)?)
    }
}

impl TryFrom<GridFn> for DensityGrid {
    type Error = Error;

    fn try_from(g: GridFn) -> Result<Self> {
        if let Some(k) = g.values.iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidDensity(format!(
                "negative value {:e} at cell {k}",
                g.values[k]
            )));
        }
        let mass = g.integral();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDensity(format!("total mass {mass} differs from 1")));
        }
        Ok(DensityGrid(g))
    }
}

impl Deref for DensityGrid {
    type Target = GridFn;

    fn deref(&self) -> &GridFn {
        &self.0
    }
}

impl AsRef<GridFn> for DensityGrid {
    fn as_ref(&self) -> &GridFn {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_product_refines_coarse_operand() {
        let h = GridFn::haar_step(1);
        let fine = GridFn::from_midpoints(4, |x| x);
        // ∫ x h(x) dx = 1/8 - 3/8
        assert!((h.inner(&fine) + 0.25).abs() < 1e-15);
        assert_eq!(h.l2_norm(), 1.0);
    }

    #[test]
    fn cell_lookup_clamps_to_unit_interval() {
        let g = GridFn::zeros(3);
        assert_eq!(g.cell_of(-0.1), 0);
        assert_eq!(g.cell_of(0.0), 0);
        assert_eq!(g.cell_of(0.125), 1);
        assert_eq!(g.cell_of(0.999_999), 7);
        assert_eq!(g.cell_of(1.0), 7);
    }

    #[test]
    fn density_validation() {
        assert!(DensityGrid::new(1, vec![1.5, 0.5]).is_ok());
        assert!(matches!(
            DensityGrid::new(1, vec![2.5, -0.5]),
            Err(Error::InvalidDensity(_))
        ));
        assert!(matches!(
            DensityGrid::new(1, vec![1.0, 0.5]),
            Err(Error::InvalidDensity(_))
        ));
        let d = DensityGrid::normalized(2, vec![1.0, 1.0, 2.0, 0.0]).unwrap();
        assert_eq!(d.values(), &[1.0, 1.0, 2.0, 0.0]);
    }

    #[test]
    fn record_round_trip_is_bit_exact() {
        let g = GridFn::from_midpoints(3, |x| (7.0 * x).sin() / 3.0);
        let text = g.to_record();
        assert!(text.starts_with("{\"D\": 3, \"values\": ["));
        let back = GridFn::from_record(&text).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn record_rejects_wrong_length() {
        assert!(GridFn::from_record("{\"D\": 2, \"values\": [1, 2, 3]}").is_err());
        assert!(GridFn::from_record("{\"D\": 1}").is_err());
    }
}
