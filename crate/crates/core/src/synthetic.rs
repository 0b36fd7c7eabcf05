//! Haar-representable test densities of prescribed Besov regularity.

use crate::error::{Error, Result};
use crate::grid::{DensityGrid, GridFn};
use crate::wavelets::{synthesize, Basis, CoeffTree};

/// Zero-mean function with Haar mother coefficients `(−1)^k 2^{−j(s+½)}` at
/// every level below `resolution`.
///
/// Each level contributes `2^{−2js}` to the squared norm, so the
/// `B^s_{2,∞}` seminorm is exactly one.
pub fn besov_shape(resolution: u32, s: f64) -> Result<GridFn> {
    if resolution == 0 {
        return Err(Error::param("resolution", "need at least one mother level"));
    }
    let mut tree = CoeffTree::zeros(0, Some(resolution - 1));
    for j in 0..resolution {
        let amp = (-(j as f64) * (s + 0.5)).exp2();
        for (k, c) in tree.mother_mut(j).unwrap().iter_mut().enumerate() {
            *c = if k % 2 == 0 { amp } else { -amp };
        }
    }
    synthesize(&tree, Basis::Haar, resolution)
}

/// `1 + c · besov_shape` with `c` chosen so that the minimum equals `floor`.
pub fn besov_density(resolution: u32, s: f64, floor: f64) -> Result<DensityGrid> {
    if !(0.0..1.0).contains(&floor) {
        return Err(Error::param("floor", format!("{floor} must lie in [0, 1)")));
    }
    let shape = besov_shape(resolution, s)?;
    let c = (1.0 - floor) / -shape.min_value();
    DensityGrid::try_from(shape.map(|v| 1.0 + c * v))
}

/// `besov_shape` rescaled to the given `L²` norm.
pub fn besov_perturbation(resolution: u32, s: f64, norm: f64) -> Result<GridFn> {
    let shape = besov_shape(resolution, s)?;
    Ok(shape.scaled(norm / shape.l2_norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelets::{analyze, besov_norm};

    #[test]
    fn level_energies_are_flat() {
        let s = 0.5;
        let shape = besov_shape(10, s).unwrap();
        let tree = analyze(&shape, Basis::Haar, 0, Some(9)).unwrap();
        assert!(tree.father()[0].abs() < 1e-14);
        for (j, c) in tree.mother_levels() {
            let e: f64 = c.iter().map(|v| v * v).sum();
            assert!((e * (2.0 * j as f64 * s).exp2() - 1.0).abs() < 1e-12);
        }
        assert!((besov_norm(&tree, s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn density_floor() {
        let f = besov_density(12, 0.5, 0.6).unwrap();
        assert!((f.min_value() - 0.6).abs() < 1e-12);
        assert!((f.integral() - 1.0).abs() < 1e-12);
        let g = besov_perturbation(8, 0.5, 0.15).unwrap();
        assert!((g.l2_norm() - 0.15).abs() < 1e-14);
        assert!(g.integral().abs() < 1e-14);
    }
}
