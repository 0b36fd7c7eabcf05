//! Histogram representations of empirical averages.
//!
//! When every test function is constant on the cells of resolution `R`, the
//! empirical average `P⁽¹⁾(e)` equals `⟨h, e⟩` for the histogram density `h`
//! of the sample at resolution `R`, and likewise for pair averages. This lets
//! all basis coefficients be computed with one wavelet transform.

use crate::grid::{cell_index, GridFn};

/// Histogram density of `observed` on `2^resolution` cells.
pub fn histogram_density(observed: &[f64], resolution: u32) -> GridFn {
    let cells = 1usize << resolution;
    let mut counts = vec![0.0; cells];
    for &y in observed {
        counts[cell_index(y, resolution)] += 1.0;
    }
    let scale = cells as f64 / observed.len() as f64;
    GridFn::new(resolution, counts.into_iter().map(|c| c * scale).collect()).expect("finite histogram")
}

/// `g` with `⟨g, e⟩ = (n−1)⁻¹ Σᵢ w(Yᵢ) e(Yᵢ₊₁)` for every `e` constant on the cells.
pub fn lagged_weighted_density(observed: &[f64], weight: &GridFn, resolution: u32) -> GridFn {
    let cells = 1usize << resolution;
    let mut acc = vec![0.0; cells];
    for w in observed.windows(2) {
        acc[cell_index(w[1], resolution)] += weight.eval(w[0]);
    }
    let scale = cells as f64 / (observed.len() - 1) as f64;
    GridFn::new(resolution, acc.into_iter().map(|c| c * scale).collect()).expect("finite histogram")
}

/// Row-major `K × K` density of consecutive pairs `(Yᵢ, Yᵢ₊₁)`, `K = 2^resolution`.
pub fn pair_density(observed: &[f64], resolution: u32) -> Vec<f64> {
    let cells = 1usize << resolution;
    let mut acc = vec![0.0; cells * cells];
    for w in observed.windows(2) {
        acc[cell_index(w[0], resolution) * cells + cell_index(w[1], resolution)] += 1.0;
    }
    let scale = (cells * cells) as f64 / (observed.len() - 1) as f64;
    acc.iter_mut().for_each(|c| *c *= scale);
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_integrates_test_functions() {
        let y = [0.1, 0.3, 0.35, 0.9];
        let h = histogram_density(&y, 2);
        let e = GridFn::new(2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let direct: f64 = y.iter().map(|&v| e.eval(v)).sum::<f64>() / 4.0;
        assert!((h.inner(&e) - direct).abs() < 1e-15);
        assert!((h.integral() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lagged_weights() {
        let y = [0.1, 0.6, 0.3, 0.8];
        let w = GridFn::haar_step(1);
        let g = lagged_weighted_density(&y, &w, 1);
        let e = GridFn::new(1, vec![2.0, 5.0]).unwrap();
        let direct: f64 = y.windows(2).map(|p| w.eval(p[0]) * e.eval(p[1])).sum::<f64>() / 3.0;
        assert!((g.inner(&e) - direct).abs() < 1e-15);
    }

    #[test]
    fn pair_density_mass() {
        let y = [0.1, 0.6, 0.3, 0.8, 0.2];
        let d = pair_density(&y, 1);
        // pairs fall in cells (0,1), (1,0), (0,1), (1,0); scale 4 / 4
        assert_eq!(d, vec![0.0, 2.0, 2.0, 0.0]);
    }
}
