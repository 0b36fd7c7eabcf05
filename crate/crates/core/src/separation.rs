//! Estimation of the separating direction `ψ₂ = (f₀ − f₁)/‖f₀ − f₁‖`.
//!
//! The covariance of consecutive observations projected on a wavelet family
//! `(e_λ)` is `r ⟨ψ₂, e_λ⟩⟨ψ₂, e_λ'⟩`, a rank-one matrix whose leading
//! eigenvector gives the coefficients of `ψ₂` up to sign.

use serde::{Deserialize, Serialize};

use crate::eigen::{leading_eigenvector, SymMatrix};
use crate::empirical::{histogram_density, pair_density};
use crate::error::{Error, Result};
use crate::grid::GridFn;
use crate::model::{reparametrize, ModelParams};
use crate::wavelets::{analyze, synthesize, Basis, CoeffTree, WaveletIndex};

/// Settings for the direction estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationConfig {
    /// Finest mother level `M` of the index set.
    #[serde(rename = "M")]
    pub m: u32,
    pub tau: f64,
    pub j0: u32,
    pub basis: Basis,
    /// Grid on which basis functions are evaluated; defaults to `M + 1`.
    pub resolution: Option<u32>,
}

impl SeparationConfig {
    pub fn new(m: u32, tau: f64) -> Self {
        SeparationConfig {
            m,
            tau,
            j0: 0,
            basis: Basis::Haar,
            resolution: None,
        }
    }

    pub fn working_resolution(&self) -> u32 {
        self.resolution.unwrap_or(self.m + 1).max(self.m + 1)
    }

    fn validate(&self) -> Result<()> {
        if self.j0 > self.m {
            return Err(Error::param("j0", format!("{} exceeds M = {}", self.j0, self.m)));
        }
        if !(self.tau >= 1.0) {
            return Err(Error::param("tau", format!("{} must be at least 1", self.tau)));
        }
        if self.working_resolution() > 12 {
            return Err(Error::GridTooLarge(self.working_resolution()));
        }
        Ok(())
    }
}

/// `|Λ(M)| = 2^J + Σ_{j=J}^{M} 2^j`.
pub fn lambda_dim(j0: u32, m: u32) -> usize {
    (1usize << j0) + (j0..=m).map(|j| 1usize << j).sum::<usize>()
}

/// Covariance matrix over the index set `Λ(M)`, in [`CoeffTree::to_flat`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub m: u32,
    pub j0: u32,
    pub basis: Basis,
    pub resolution: u32,
    pub matrix: SymMatrix,
}

impl GramMatrix {
    pub fn index_set(&self) -> Vec<WaveletIndex> {
        CoeffTree::zeros(self.j0, Some(self.m)).indices()
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

/// Coefficients of `f` over `Λ(M)` as a flat vector.
fn lambda_coefficients(f: &GridFn, cfg: &SeparationConfig) -> Result<Vec<f64>> {
    let res = cfg.working_resolution().max(f.resolution());
    Ok(analyze(&f.refined(res), cfg.basis, cfg.j0, Some(cfg.m))?.to_flat())
}

/// `½ P⁽²⁾(e⊗e' + e'⊗e) − P⁽¹⁾(e) P⁽¹⁾(e')` over `Λ(M)`.
pub fn empirical_gram(observed: &[f64], cfg: &SeparationConfig) -> Result<GramMatrix> {
    cfg.validate()?;
    if observed.len() < 2 {
        return Err(Error::PathTooShort {
            len: observed.len(),
            window: 2,
        });
    }
    let res = cfg.working_resolution();
    let cells = 1usize << res;
    let first = lambda_coefficients(&histogram_density(observed, res), cfg)?;
    let pairs = pair_density(observed, res);
    let dim = first.len();

    // transform the second coordinate of every row, then the first
    let mut rows = Vec::with_capacity(cells);
    for row in pairs.chunks_exact(cells) {
        let g = GridFn::new(res, row.to_vec())?;
        rows.push(lambda_coefficients(&g, cfg)?);
    }
    let mut joint = vec![0.0; dim * dim];
    let mut column = vec![0.0; cells];
    for lp in 0..dim {
        for (a, r) in rows.iter().enumerate() {
            column[a] = r[lp];
        }
        let c = lambda_coefficients(&GridFn::new(res, column.clone())?, cfg)?;
        for (l, v) in c.into_iter().enumerate() {
            joint[l * dim + lp] = v;
        }
    }
    let mut matrix = SymMatrix::zeros(dim);
    for l in 0..dim {
        for lp in 0..dim {
            let v = 0.5 * (joint[l * dim + lp] + joint[lp * dim + l]) - first[l] * first[lp];
            matrix.set(l, lp, v);
        }
    }
    Ok(GramMatrix {
        m: cfg.m,
        j0: cfg.j0,
        basis: cfg.basis,
        resolution: res,
        matrix,
    })
}

/// Population matrix `r ⟨ψ₂, e_λ⟩⟨ψ₂, e_λ'⟩`.
pub fn gram_oracle(theta: &ModelParams, cfg: &SeparationConfig) -> Result<GramMatrix> {
    cfg.validate()?;
    let pt = reparametrize(theta);
    let dim = lambda_dim(cfg.j0, cfg.m);
    let matrix = match &pt.psi2 {
        Some(psi2) => SymMatrix::rank_one(&lambda_coefficients(psi2, cfg)?, pt.r()),
        None => SymMatrix::zeros(dim),
    };
    Ok(GramMatrix {
        m: cfg.m,
        j0: cfg.j0,
        basis: cfg.basis,
        resolution: cfg.working_resolution(),
        matrix,
    })
}

/// Estimated direction: unit `L²` norm and `sup |grid| ≤ τ` (after rescaling).
#[derive(Debug, Clone, PartialEq)]
pub struct SeparatingDirection {
    pub grid: GridFn,
    pub tau: f64,
    pub leading_eigenvalue: f64,
    /// The synthesized function vanished, so `grid` is zero.
    pub degenerate: bool,
}

impl SeparatingDirection {
    /// Wraps a known direction, e.g. the true `ψ₂`.
    pub fn from_grid(grid: GridFn, tau: f64) -> Result<Self> {
        let norm = grid.l2_norm();
        if !(norm > 0.0) {
            return Err(Error::param("direction", "grid has zero norm"));
        }
        Ok(SeparatingDirection {
            grid: grid.scaled(1.0 / norm),
            tau,
            leading_eigenvalue: f64::NAN,
            degenerate: false,
        })
    }

    pub fn to_record(&self) -> String {
        self.grid.to_record()
    }

    pub fn from_record(text: &str, tau: f64) -> Result<Self> {
        Self::from_grid(GridFn::from_record(text)?, tau)
    }
}

/// Leading eigenvector, synthesized on the Gram grid, clamped to `[−τ, τ]` and normalized.
pub fn direction_from_gram(gram: &GramMatrix, tau: f64) -> Result<SeparatingDirection> {
    if !(tau >= 1.0) {
        return Err(Error::param("tau", format!("{tau} must be at least 1")));
    }
    let eig = leading_eigenvector(&gram.matrix);
    let tree = CoeffTree::from_flat(gram.j0, Some(gram.m), &eig.vector)?;
    let raw = synthesize(&tree, gram.basis, gram.resolution)?;
    let clamped = raw.map(|v| v.clamp(-tau, tau));
    let norm = clamped.l2_norm();
    let degenerate = eig.degenerate || !(norm > 0.0);
    Ok(SeparatingDirection {
        grid: if degenerate { clamped } else { clamped.scaled(1.0 / norm) },
        tau,
        leading_eigenvalue: eig.value,
        degenerate,
    })
}

pub fn psi_tilde_from_path(observed: &[f64], cfg: &SeparationConfig) -> Result<SeparatingDirection> {
    direction_from_gram(&empirical_gram(observed, cfg)?, cfg.tau)
}

/// Whether `2^{−M s*} ≤ ζ √(2^{2s*} − 1) / (4R)`, the level condition for the direction estimate.
pub fn level_sufficient(m: u32, s_star: f64, zeta: f64, radius: f64) -> bool {
    (-(m as f64) * s_star).exp2() <= zeta * ((2.0 * s_star).exp2() - 1.0).sqrt() / (4.0 * radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::jacobi_eigen;
    use crate::grid::DensityGrid;
    use crate::simulate::{sample_path, split_3n, SeedRecord};
    use crate::wavelets::basis_function;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn theta_star(res: u32) -> ModelParams {
        let h = GridFn::haar_step(res);
        let f1 = DensityGrid::try_from(GridFn::constant(res, 1.0).lin_comb(1.0, &h, 0.5)).unwrap();
        ModelParams::new(0.2, 0.3, DensityGrid::uniform(res), f1).unwrap()
    }

    #[test]
    fn dimensions() {
        assert_eq!(lambda_dim(0, 0), 2);
        assert_eq!(lambda_dim(0, 3), 16);
        assert_eq!(lambda_dim(2, 3), 16);
        assert_eq!(lambda_dim(1, 1), 4);
        let g = gram_oracle(&theta_star(4), &SeparationConfig::new(3, 4.0)).unwrap();
        assert_eq!(g.dim(), 16);
        assert_eq!(g.index_set().len(), 16);
    }

    #[test]
    fn constant_path_gives_zero_matrix() {
        let y = vec![0.4; 100];
        let g = empirical_gram(&y, &SeparationConfig::new(2, 4.0)).unwrap();
        assert!(g.matrix.as_slice().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn empirical_gram_matches_direct_sums() {
        let theta = theta_star(3);
        let path = sample_path(&theta, 500, SeedRecord::new(3, 3)).unwrap();
        let y = &path.observed;
        let cfg = SeparationConfig { j0: 1, ..SeparationConfig::new(2, 4.0) };
        let g = empirical_gram(y, &cfg).unwrap();
        let idx = g.index_set();
        let fns: Vec<GridFn> = idx.iter().map(|&i| basis_function(cfg.basis, cfg.j0, i, 3).unwrap()).collect();
        let mean1 = |e: &GridFn| y.iter().map(|&v| e.eval(v)).sum::<f64>() / y.len() as f64;
        let mean2 = |a: &GridFn, b: &GridFn| {
            y.windows(2).map(|w| a.eval(w[0]) * b.eval(w[1])).sum::<f64>() / (y.len() - 1) as f64
        };
        for (l, a) in fns.iter().enumerate() {
            for (lp, b) in fns.iter().enumerate() {
                let want = 0.5 * (mean2(a, b) + mean2(b, a)) - mean1(a) * mean1(b);
                assert!((g.matrix.get(l, lp) - want).abs() < 1e-12);
            }
        }
        assert!(g.matrix.max_asymmetry() <= 1e-14);
    }

    #[test]
    fn oracle_theta_star_m0() {
        let theta = theta_star(4);
        let g = gram_oracle(&theta, &SeparationConfig::new(0, 4.0)).unwrap();
        let eig = leading_eigenvector(&g.matrix);
        assert!((eig.value - 0.03).abs() < 1e-15);
        assert!(eig.vector[0].abs() < 1e-15 && (eig.vector[1].abs() - 1.0).abs() < 1e-15);
        assert!((g.matrix.trace() - eig.value).abs() < 1e-15);
    }

    #[test]
    fn oracle_is_zero_for_equal_densities() {
        let u = DensityGrid::uniform(3);
        let theta = ModelParams::new(0.2, 0.3, u.clone(), u).unwrap();
        let g = gram_oracle(&theta, &SeparationConfig::new(2, 4.0)).unwrap();
        assert!(g.matrix.as_slice().iter().all(|&v| v == 0.0));
        let d = direction_from_gram(&g, 4.0).unwrap();
        assert!(d.degenerate);
    }

    #[test]
    fn oracle_recovers_psi2() {
        let theta = theta_star(4);
        let g = gram_oracle(&theta, &SeparationConfig::new(3, 4.0)).unwrap();
        let d = direction_from_gram(&g, 4.0).unwrap();
        let psi2 = reparametrize(&theta).psi2.unwrap();
        assert!(d.grid.max_abs_diff(&psi2.scaled(-1.0)) < 1e-12);
        assert!((d.grid.l2_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clamp_is_active_for_small_tau() {
        // a spike supported on one cell of eight has sup √8 > 1.5
        let g = GramMatrix {
            m: 2,
            j0: 0,
            basis: Basis::Haar,
            resolution: 3,
            matrix: SymMatrix::rank_one(
                &analyze(&GridFn::new(3, vec![8f64.sqrt(), 0., 0., 0., 0., 0., 0., 0.]).unwrap(), Basis::Haar, 0, Some(2))
                    .unwrap()
                    .to_flat(),
                1.0,
            ),
        };
        let d = direction_from_gram(&g, 1.5).unwrap();
        // before rescaling the spike was cut to 1.5; afterwards it is the only mass
        assert!((d.grid.values()[0] - 8f64.sqrt()).abs() < 1e-12);
        assert!(direction_from_gram(&g, 0.5).is_err());
        let wide = direction_from_gram(&g, 4.0).unwrap();
        assert!((wide.grid.values()[0] - 8f64.sqrt()).abs() < 1e-12);
        assert!(wide.grid.sup_norm() <= 4.0);
    }

    #[test]
    fn clamp_changes_shape() {
        // spike of 2.5 over a plateau of 0.5: clamping at 1 halves the ratio to 2
        let f = GridFn::new(3, vec![2.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]).unwrap();
        let c = analyze(&f, Basis::Haar, 0, Some(2)).unwrap().to_flat();
        let g = GramMatrix {
            m: 2,
            j0: 0,
            basis: Basis::Haar,
            resolution: 3,
            matrix: SymMatrix::rank_one(&c, 1.0),
        };
        let d = direction_from_gram(&g, 1.0).unwrap();
        let v = d.grid.values();
        assert!((v[0] - 2.0 * v[1]).abs() < 1e-12);
        assert!((d.grid.l2_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn record_round_trip() {
        let d = direction_from_gram(&gram_oracle(&theta_star(4), &SeparationConfig::new(3, 4.0)).unwrap(), 4.0).unwrap();
        let back = SeparatingDirection::from_record(&d.to_record(), 4.0).unwrap();
        assert!(back.grid.max_abs_diff(&d.grid) < 1e-15);
    }

    #[test]
    fn level_condition() {
        assert!(level_sufficient(10, 1.0, 0.5, 1.0));
        assert!(!level_sufficient(1, 1.0, 0.5, 1.0));
    }

    #[test]
    fn split_estimate_aligns_with_psi2() {
        let theta = theta_star(4);
        let psi2 = reparametrize(&theta).psi2.unwrap();
        let cfg = SeparationConfig::new(3, 4.0);
        let (train, _) = split_3n(&theta, 1 << 14, SeedRecord::new(12, 0)).unwrap();
        let d = psi_tilde_from_path(&train.observed, &cfg).unwrap();
        assert!(d.grid.inner(&psi2).abs() > 0.5);
    }

    proptest! {
        #[test]
        fn oracle_is_rank_one(seed in any::<u64>(), m in 0u32..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut dens = || {
                let w: Vec<f64> = (0..32).map(|_| rng.random_range(0.05..1.0)).collect();
                DensityGrid::normalized(5, w).unwrap()
            };
            let theta = ModelParams::new(0.3, 0.4, dens(), dens()).unwrap();
            let g = gram_oracle(&theta, &SeparationConfig::new(m, 4.0)).unwrap();
            let mut vals = jacobi_eigen(&g.matrix).values;
            vals.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
            prop_assert!(vals[1].abs() <= 1e-12 * vals[0].abs());
            let eig = leading_eigenvector(&g.matrix);
            prop_assert!((g.matrix.trace() - eig.value).abs() < 1e-12);
        }
    }
}
