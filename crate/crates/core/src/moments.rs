//! Moment functionals of a separating direction and the transition-matrix estimator.
//!
//! For a direction `ψ̃` and observations `Y₁, …, Yₙ` write `P⁽ˢ⁾` for the
//! empirical average over windows of `s` consecutive observations. The
//! moment triple is
//!
//! ```text
//! m₁ = P⁽²⁾(ψ̃⊗ψ̃) − P⁽¹⁾(ψ̃)²
//! m₂ = P⁽³⁾(ψ̃⊗1⊗ψ̃) − P⁽¹⁾(ψ̃)²
//! m₃ = −P⁽³⁾(ψ̃⊗ψ̃⊗ψ̃) + P⁽¹⁾(ψ̃)³ + (2m₁ + m₂) P⁽¹⁾(ψ̃)
//! ```
//!
//! and the same expressions with population expectations define the
//! population triple.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridFn;
use crate::model::{reparametrize, JointDensity3, ModelParams};

/// `(n − s + 1)⁻¹ Σᵢ h(Yᵢ, …, Y_{i+s−1})`.
pub fn empirical_moment(observed: &[f64], s: usize, h: impl Fn(&[f64]) -> f64) -> Result<f64> {
    if s == 0 || observed.len() < s {
        return Err(Error::PathTooShort {
            len: observed.len(),
            window: s,
        });
    }
    let windows = observed.windows(s);
    let count = windows.len() as f64;
    Ok(windows.map(h).sum::<f64>() / count)
}

/// The four expectations the moment triple is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentExpectations {
    /// `E ψ̃(Y₁)`
    pub e1: f64,
    /// `E ψ̃(Y₁)ψ̃(Y₂)`
    pub e2: f64,
    /// `E ψ̃(Y₁)ψ̃(Y₃)`
    pub e13: f64,
    /// `E ψ̃(Y₁)ψ̃(Y₂)ψ̃(Y₃)`
    pub e3: f64,
}

impl MomentExpectations {
    /// Empirical averages over the path.
    pub fn empirical(observed: &[f64], psi_tilde: &GridFn) -> Result<Self> {
        if observed.len() < 3 {
            return Err(Error::PathTooShort {
                len: observed.len(),
                window: 3,
            });
        }
        let v: Vec<f64> = observed.iter().map(|&y| psi_tilde.eval(y)).collect();
        let n = v.len();
        let e1 = v.iter().sum::<f64>() / n as f64;
        let e2 = v.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (n - 1) as f64;
        let e13 = v.windows(3).map(|w| w[0] * w[2]).sum::<f64>() / (n - 2) as f64;
        let e3 = v.windows(3).map(|w| w[0] * w[1] * w[2]).sum::<f64>() / (n - 2) as f64;
        Ok(MomentExpectations { e1, e2, e13, e3 })
    }

    /// Population expectations by grid quadrature against the joint laws.
    pub fn population(law: &JointDensity3, psi_tilde: &GridFn) -> Self {
        let one = GridFn::constant(0, 1.0);
        MomentExpectations {
            e1: law.expect1(psi_tilde),
            e2: law.expect2(psi_tilde, psi_tilde),
            e13: law.expect3(psi_tilde, &one, psi_tilde),
            e3: law.expect3(psi_tilde, psi_tilde, psi_tilde),
        }
    }

    pub fn moments(&self) -> MomentTriple {
        let e1 = self.e1;
        let m1 = self.e2 - e1 * e1;
        let m2 = self.e13 - e1 * e1;
        let m3 = -self.e3 + e1 * e1 * e1 + (2.0 * m1 + m2) * e1;
        MomentTriple {
            m1,
            m2,
            m3,
            i_tilde: None,
        }
    }
}

/// `(m₁, m₂, m₃)` for one direction; `i_tilde = ⟨ψ₂, ψ̃⟩` is known only for the closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentTriple {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub i_tilde: Option<f64>,
}

impl MomentTriple {
    /// `4 m₁² (m₂)₊ + m₃²`.
    pub fn v(&self) -> f64 {
        4.0 * self.m1 * self.m1 * self.m2.max(0.0) + self.m3 * self.m3
    }

    pub fn max_abs_diff(&self, other: &MomentTriple) -> f64 {
        (self.m1 - other.m1)
            .abs()
            .max((self.m2 - other.m2).abs())
            .max((self.m3 - other.m3).abs())
    }
}

pub fn m_hat(observed: &[f64], psi_tilde: &GridFn) -> Result<MomentTriple> {
    Ok(MomentExpectations::empirical(observed, psi_tilde)?.moments())
}

/// Closed form `(r Ĩ², r φ₂ Ĩ², r φ₁φ₂φ₃ Ĩ³)` with `Ĩ = ⟨ψ₂, ψ̃⟩`.
pub fn moment_oracle(theta: &ModelParams, psi_tilde: &GridFn) -> MomentTriple {
    let pt = reparametrize(theta);
    let i = pt.psi2.as_ref().map_or(0.0, |p| p.inner(psi_tilde));
    let r = pt.r();
    let phi = pt.phi;
    MomentTriple {
        m1: r * i * i,
        m2: r * phi.phi2 * i * i,
        m3: r * phi.phi1 * phi.phi2 * phi.phi3 * i * i * i,
        i_tilde: Some(i),
    }
}

/// The same triple from quadrature of the population expectations.
pub fn moment_oracle_quadrature(theta: &ModelParams, psi_tilde: &GridFn) -> MomentTriple {
    let law = JointDensity3::from_reparam(&reparametrize(theta));
    MomentExpectations::population(&law, psi_tilde).moments()
}

/// `(φ̂₁, φ̂₂)` and the degenerate cases hit on the way.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiHat {
    pub phi1: f64,
    pub phi2: f64,
    /// `4 m̂₁² (m̂₂)₊ + m̂₃² = 0`, so `φ̂₁` was set to 0.
    pub v_zero: bool,
    /// `m̂₁ = 0`, so `φ̂₂` was set to 0.
    pub m1_zero: bool,
}

pub fn phi_hat(m: &MomentTriple) -> PhiHat {
    let v = m.v();
    let v_zero = !(v > 0.0);
    let m1_zero = m.m1 == 0.0;
    let phi1 = if v_zero { 0.0 } else { (m.m3 / v.sqrt()).clamp(-1.0, 1.0) };
    let phi2 = if m1_zero { 0.0 } else { (m.m2 / m.m1).clamp(-1.0, 1.0) };
    PhiHat {
        phi1,
        phi2,
        v_zero,
        m1_zero,
    }
}

/// A 2×2 transition matrix, row-major.
pub type Matrix2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QEstimate {
    pub phi1_hat: f64,
    pub phi2_hat: f64,
    /// Off-diagonals straight from the formulae, diagonals by complement.
    pub q_raw: Matrix2,
    /// Off-diagonals clamped to `[0, 1]` first.
    pub q: Matrix2,
    pub moments: Option<MomentTriple>,
    pub flags: Option<PhiHat>,
}

pub fn q_hat(phi1_hat: f64, phi2_hat: f64) -> QEstimate {
    let a = 0.5 * (1.0 - phi1_hat) * (1.0 - phi2_hat);
    let b = 0.5 * (1.0 + phi1_hat) * (1.0 - phi2_hat);
    let (ac, bc) = (a.clamp(0.0, 1.0), b.clamp(0.0, 1.0));
    QEstimate {
        phi1_hat,
        phi2_hat,
        q_raw: [[1.0 - a, a], [b, 1.0 - b]],
        q: [[1.0 - ac, ac], [bc, 1.0 - bc]],
        moments: None,
        flags: None,
    }
}

/// `m̂`, then `φ̂`, then `Q̂` from one path.
pub fn estimate_q(observed: &[f64], psi_tilde: &GridFn) -> Result<QEstimate> {
    let m = m_hat(observed, psi_tilde)?;
    let phi = phi_hat(&m);
    Ok(QEstimate {
        moments: Some(m),
        flags: Some(phi),
        ..q_hat(phi.phi1, phi.phi2)
    })
}

/// Squared Frobenius distance, minimised over relabelling of the states.
pub fn frobenius_loss_min_perm(q_hat: &Matrix2, q_true: &Matrix2) -> f64 {
    let loss = |perm: [usize; 2]| {
        let mut s = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                s += (q_hat[perm[i]][perm[j]] - q_true[i][j]).powi(2);
            }
        }
        s
    };
    loss([0, 1]).min(loss([1, 0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DensityGrid;
    use crate::simulate::{sample_path, SeedRecord};
    use crate::stats::batch_means;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn theta_star(res: u32) -> ModelParams {
        let h = GridFn::haar_step(res);
        let f1 = DensityGrid::try_from(GridFn::constant(res, 1.0).lin_comb(1.0, &h, 0.5)).unwrap();
        ModelParams::new(0.2, 0.3, DensityGrid::uniform(res), f1).unwrap()
    }

    fn random_theta(rng: &mut ChaCha8Rng, res: u32) -> ModelParams {
        let mut dens = || {
            let w: Vec<f64> = (0..1usize << res).map(|_| rng.random_range(0.05..1.0)).collect();
            DensityGrid::normalized(res, w).unwrap()
        };
        let (f0, f1) = (dens(), dens());
        ModelParams::new(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), f0, f1).unwrap()
    }

    fn random_direction(rng: &mut ChaCha8Rng, res: u32) -> GridFn {
        let g = GridFn::new(res, (0..1usize << res).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        g.scaled(1.0 / g.l2_norm())
    }

    #[test]
    fn empirical_moment_basics() {
        let y = [0.25, 0.75];
        assert_eq!(empirical_moment(&y, 1, |_| 1.0).unwrap(), 1.0);
        assert_eq!(empirical_moment(&y, 1, |w| w[0]).unwrap(), 0.5);
        assert_eq!(empirical_moment(&y, 2, |w| w[0] * w[1]).unwrap(), 0.1875);
        assert!(matches!(
            empirical_moment(&y, 3, |_| 1.0),
            Err(Error::PathTooShort { len: 2, window: 3 })
        ));
    }

    #[test]
    fn constant_path_has_zero_moments() {
        let y = vec![0.3; 50];
        let m = m_hat(&y, &GridFn::haar_step(2)).unwrap();
        assert_eq!((m.m1, m.m2, m.m3), (0.0, 0.0, 0.0));
    }

    #[test]
    fn oracle_theta_star() {
        let theta = theta_star(4);
        let minus_h = GridFn::haar_step(4).scaled(-1.0);
        let m = moment_oracle(&theta, &minus_h);
        assert!((m.m1 - 0.03).abs() < 1e-15);
        assert!((m.m2 - 0.015).abs() < 1e-15);
        assert!((m.m3 - 0.0015).abs() < 1e-15);
        assert_eq!(m.i_tilde, Some(1.0));
        assert!(moment_oracle_quadrature(&theta, &minus_h).max_abs_diff(&m) < 1e-15);
    }

    #[test]
    fn oracle_degenerate_cases() {
        let theta = theta_star(3);
        // orthogonal to ψ₂ = −h
        let orth = GridFn::new(3, vec![1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0]).unwrap();
        let m = moment_oracle(&theta, &orth);
        assert_eq!((m.m1, m.m2, m.m3), (0.0, 0.0, 0.0));
        assert!(moment_oracle_quadrature(&theta, &orth).max_abs_diff(&m) < 1e-15);

        let f = DensityGrid::normalized(3, vec![1.0, 2.0, 1.0, 3.0, 1.0, 1.0, 2.0, 1.0]).unwrap();
        let iid = ModelParams::new(0.2, 0.3, f.clone(), f).unwrap();
        let m = moment_oracle(&iid, &orth);
        assert_eq!((m.m1, m.m2, m.m3), (0.0, 0.0, 0.0));
        assert!(moment_oracle_quadrature(&iid, &orth).max_abs_diff(&m) < 1e-15);
    }

    #[test]
    fn plug_in_phi_theta_star() {
        let theta = theta_star(3);
        let h = GridFn::haar_step(3);
        let phi = phi_hat(&moment_oracle(&theta, &h.scaled(-1.0)));
        assert!((phi.phi1 - 0.2).abs() < 1e-12 && (phi.phi2 - 0.5).abs() < 1e-12);
        let flipped = phi_hat(&moment_oracle(&theta, &h));
        assert!((flipped.phi1 + 0.2).abs() < 1e-12 && (flipped.phi2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn phi_hat_degenerate_inputs() {
        let t = |m1, m2, m3| MomentTriple { m1, m2, m3, i_tilde: None };
        assert_eq!(phi_hat(&t(0.1, -0.02, 0.003)).phi1, 1.0);
        assert_eq!(phi_hat(&t(0.1, -0.02, -0.003)).phi1, -1.0);
        let z = phi_hat(&t(0.0, 0.0, 0.0));
        assert!(z.v_zero && z.m1_zero && z.phi1 == 0.0 && z.phi2 == 0.0);
        assert_eq!(phi_hat(&t(0.1, 0.5, 0.0)).phi2, 1.0);
        assert_eq!(phi_hat(&t(0.1, -0.5, 0.0)).phi2, -1.0);
    }

    #[test]
    fn q_hat_examples() {
        let q = q_hat(0.2, 0.5);
        assert!((q.q[0][1] - 0.2).abs() < 1e-15 && (q.q[1][0] - 0.3).abs() < 1e-15);
        assert_eq!(q_hat(0.0, 1.0).q, [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(q_hat(0.0, -1.0).q, [[0.0, 1.0], [1.0, 0.0]]);
        let wild = q_hat(-1.0, -1.0);
        assert_eq!(wild.q_raw[0][1], 2.0);
        assert_eq!(wild.q, [[0.0, 1.0], [0.0, 1.0]]);
    }

    #[test]
    fn frobenius_examples() {
        let q = [[0.8, 0.2], [0.3, 0.7]];
        assert_eq!(frobenius_loss_min_perm(&q, &q), 0.0);
        let swapped = [[0.7, 0.3], [0.2, 0.8]];
        assert_eq!(frobenius_loss_min_perm(&swapped, &q), 0.0);
        let off = [[0.7, 0.3], [0.4, 0.6]];
        let direct = 4.0 * 0.01;
        assert!((frobenius_loss_min_perm(&off, &q) - direct).abs() < 1e-15);
    }

    #[test]
    fn m_hat_concentrates_theta_star() {
        let theta = theta_star(3);
        let psi = GridFn::haar_step(3).scaled(-1.0);
        let reps: Vec<MomentTriple> = (0..40)
            .map(|r| {
                let path = sample_path(&theta, 1 << 16, SeedRecord::for_replication(21, 1 << 16, r)).unwrap();
                m_hat(&path.observed, &psi).unwrap()
            })
            .collect();
        let target = [0.03, 0.015, 0.0015];
        for (k, &t) in target.iter().enumerate() {
            let vals: Vec<f64> = reps.iter().map(|m| [m.m1, m.m2, m.m3][k]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
            assert!((vals[0] - t).abs() < 4.0 * sd, "component {k}: {} vs {t}", vals[0]);
        }
    }

    #[test]
    fn lag_one_product_matches_population() {
        let theta = theta_star(3);
        let psi = GridFn::haar_step(3).scaled(-1.0);
        let path = sample_path(&theta, 100_000, SeedRecord::new(99, 1)).unwrap();
        let v: Vec<f64> = path.observed.windows(2).map(|w| psi.eval(w[0]) * psi.eval(w[1])).collect();
        let (mean, se) = batch_means(&v, 32);
        let e1 = reparametrize(&theta).psi1.inner(&psi);
        let target = moment_oracle(&theta, &psi).m1 + e1 * e1;
        assert!((mean - target).abs() < 4.0 * se, "{mean} vs {target} (se {se})");
    }

    proptest! {
        #[test]
        fn oracle_routes_agree(seed in any::<u64>(), res in 1u32..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta = random_theta(&mut rng, res);
            let psi = random_direction(&mut rng, res);
            let a = moment_oracle(&theta, &psi);
            let b = moment_oracle_quadrature(&theta, &psi);
            prop_assert!(a.max_abs_diff(&b) < 1e-10);
            // population constraint 0 <= m2 <= |m1|
            prop_assert!(a.m2 >= -1e-15 && a.m2 <= a.m1.abs() + 1e-15);
        }

        #[test]
        fn plug_in_recovers_signed_phi(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta = random_theta(&mut rng, 4);
            let psi = random_direction(&mut rng, 4);
            let m = moment_oracle(&theta, &psi);
            let i = m.i_tilde.unwrap();
            prop_assume!(i.abs() > 1e-3);
            let pt = reparametrize(&theta);
            let phi = phi_hat(&m);
            prop_assert!((phi.phi1 - i.signum() * pt.phi.phi1).abs() < 1e-12);
            prop_assert!((phi.phi2 - pt.phi.phi2).abs() < 1e-12);
        }

        #[test]
        fn phi_hat_stays_in_range(m1 in -1.0f64..1.0, m2 in -1.0f64..1.0, m3 in -1.0f64..1.0) {
            let phi = phi_hat(&MomentTriple { m1, m2, m3, i_tilde: None });
            prop_assert!((-1.0..=1.0).contains(&phi.phi1));
            prop_assert!((-1.0..=1.0).contains(&phi.phi2));
            let q = q_hat(phi.phi1, phi.phi2);
            for row in [q.q, q.q_raw] {
                prop_assert!((row[0][0] + row[0][1] - 1.0).abs() < 1e-15);
                prop_assert!((row[1][0] + row[1][1] - 1.0).abs() < 1e-15);
            }
            prop_assert!(q.q.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
