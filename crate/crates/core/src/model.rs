//! Two-state HMM parameters, the `(φ, ψ)` coordinates, the law of three
//! consecutive observations, and parameter-class diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityGrid, GridFn};
use crate::wavelets::{analyze, besov_norm, Basis};

/// Below this `‖f₀ − f₁‖` the direction `ψ₂` is treated as undefined.
pub const DEGENERATE_PHI3: f64 = 1e-14;

/// Largest resolution for which [`JointDensity3::tabulate`] builds the full cube.
pub const MAX_TABULATED_RESOLUTION: u32 = 7;

/// `θ = (p, q, f₀, f₁)` with `Q = [[1-p, p], [q, 1-q]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    p: f64,
    q: f64,
    f0: DensityGrid,
    f1: DensityGrid,
}

impl ModelParams {
    /// Only positivity is enforced here; class constraints are checked by
    /// [`class_membership`].
    pub fn new(p: f64, q: f64, f0: DensityGrid, f1: DensityGrid) -> Result<Self> {
        for (name, v) in [("p", p), ("q", q)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::param(name, format!("{v} is not in (0, 1]")));
            }
        }
        if f0.resolution() != f1.resolution() {
            return Err(Error::ResolutionMismatch(f0.resolution(), f1.resolution()));
        }
        Ok(ModelParams { p, q, f0, f1 })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn f0(&self) -> &DensityGrid {
        &self.f0
    }

    pub fn f1(&self) -> &DensityGrid {
        &self.f1
    }

    pub fn emission(&self, state: usize) -> &DensityGrid {
        if state == 0 {
            &self.f0
        } else {
            &self.f1
        }
    }

    pub fn resolution(&self) -> u32 {
        self.f0.resolution()
    }

    pub fn transition_matrix(&self) -> [[f64; 2]; 2] {
        [[1.0 - self.p, self.p], [self.q, 1.0 - self.q]]
    }

    /// The same parameter with the hidden labels exchanged.
    pub fn label_swapped(&self) -> ModelParams {
        ModelParams {
            p: self.q,
            q: self.p,
            f0: self.f1.clone(),
            f1: self.f0.clone(),
        }
    }

    /// `(min(p,q), |1-p-q|, ‖f₀-f₁‖)`, the distances to the i.i.d. frontier.
    pub fn frontier_distances(&self) -> (f64, f64, f64) {
        (
            self.p.min(self.q),
            (1.0 - self.p - self.q).abs(),
            self.f0.l2_dist_sq(&self.f1).sqrt(),
        )
    }
}

/// `(π₀, π₁) = (q, p) / (p + q)`.
pub fn stationary_distribution(theta: &ModelParams) -> (f64, f64) {
    let s = theta.p + theta.q;
    (theta.q / s, theta.p / s)
}

/// Absolute spectral gap `1 - |1 - p - q|`.
pub fn spectral_gap(theta: &ModelParams) -> f64 {
    1.0 - (1.0 - theta.p - theta.q).abs()
}

/// The scalar coordinates `(φ₁, φ₂, φ₃)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phi {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
}

impl Phi {
    pub fn new(phi1: f64, phi2: f64, phi3: f64) -> Self {
        Phi { phi1, phi2, phi3 }
    }

    /// `r(φ) = ¼ (1 - φ₁²) φ₂ φ₃²`.
    pub fn r(&self) -> f64 {
        r_of_phi(self)
    }
}

pub fn r_of_phi(phi: &Phi) -> f64 {
    0.25 * (1.0 - phi.phi1 * phi.phi1) * phi.phi2 * phi.phi3 * phi.phi3
}

/// `(φ, ψ)` coordinates of a parameter. `psi2` is `None` when `φ₃ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamPoint {
    pub phi: Phi,
    pub psi1: DensityGrid,
    pub psi2: Option<GridFn>,
}

impl ReparamPoint {
    pub fn is_degenerate(&self) -> bool {
        self.psi2.is_none()
    }

    pub fn r(&self) -> f64 {
        self.phi.r()
    }
}

pub fn reparametrize(theta: &ModelParams) -> ReparamPoint {
    let (p, q) = (theta.p, theta.q);
    let s = p + q;
    let diff = theta.f0.lin_comb(1.0, &theta.f1, -1.0);
    let phi3 = diff.l2_norm();
    let psi1 = theta.f0.lin_comb(q / s, &theta.f1, p / s);
    // a convex combination of densities is a density
    let psi1 = DensityGrid::try_from(psi1).expect("mixture of densities");
    let psi2 = (phi3 >= DEGENERATE_PHI3).then(|| diff.scaled(1.0 / phi3));
    ReparamPoint {
        phi: Phi::new((q - p) / s, 1.0 - p - q, if psi2.is_some() { phi3 } else { 0.0 }),
        psi1,
        psi2,
    }
}

/// Inverse of [`reparametrize`].
pub fn invert_reparam(phi: Phi, psi1: &GridFn, psi2: Option<&GridFn>) -> Result<ModelParams> {
    if !(phi.phi1.abs() < 1.0) {
        return Err(Error::param("phi1", format!("|{}| must be below 1", phi.phi1)));
    }
    if !(phi.phi2.abs() < 1.0) {
        return Err(Error::param("phi2", format!("|{}| must be below 1", phi.phi2)));
    }
    let p = 0.5 * (1.0 - phi.phi2) * (1.0 - phi.phi1);
    let q = 0.5 * (1.0 - phi.phi2) * (1.0 + phi.phi1);
    let (f0, f1) = match psi2 {
        Some(psi2) => (
            psi1.lin_comb(1.0, psi2, 0.5 * phi.phi3 * (1.0 - phi.phi1)),
            psi1.lin_comb(1.0, psi2, -0.5 * phi.phi3 * (1.0 + phi.phi1)),
        ),
        None => (psi1.clone(), psi1.clone()),
    };
    let f0 = clean_density(f0)?;
    let f1 = clean_density(f1)?;
    ModelParams::new(p, q, f0, f1)
}

fn clean_density(g: GridFn) -> Result<DensityGrid> {
    if let Some((cell, &value)) = g.values().iter().enumerate().find(|(_, &v)| v < -1e-10) {
        return Err(Error::InconsistentReparam { cell, value });
    }
    DensityGrid::try_from(g.map(|v| v.max(0.0)))
}

/// Law of `(Y₁, Y₂, Y₃)` under the stationary chain, in the `(φ, ψ)` form
///
/// `ψ₁⊗ψ₁⊗ψ₁ + r[ψ₂⊗ψ₂⊗ψ₁ + ψ₁⊗ψ₂⊗ψ₂] + φ₂r ψ₂⊗ψ₁⊗ψ₂ − φ₁φ₂φ₃r ψ₂⊗ψ₂⊗ψ₂`.
///
/// With `φ₃ = 0` it reduces to the product density `ψ₁⊗ψ₁⊗ψ₁`.
#[derive(Debug, Clone)]
pub struct JointDensity3 {
    phi: Phi,
    r: f64,
    psi1: GridFn,
    /// Zero when degenerate.
    psi2: GridFn,
}

pub fn joint_density_3(theta: &ModelParams) -> JointDensity3 {
    JointDensity3::from_reparam(&reparametrize(theta))
}

impl JointDensity3 {
    pub fn from_reparam(point: &ReparamPoint) -> Self {
        let res = point.psi1.resolution();
        JointDensity3 {
            phi: point.phi,
            r: point.r(),
            psi1: point.psi1.as_grid().clone(),
            psi2: point.psi2.clone().unwrap_or_else(|| GridFn::zeros(res)),
        }
    }

    pub fn resolution(&self) -> u32 {
        self.psi1.resolution()
    }

    pub fn is_degenerate(&self) -> bool {
        self.phi.phi3 == 0.0
    }

    #[inline]
    fn coefs(&self) -> (f64, f64, f64) {
        let r = self.r;
        (r, self.phi.phi2 * r, -self.phi.phi1 * self.phi.phi2 * self.phi.phi3 * r)
    }

    /// Density value on the cell triple `(a, b, c)`.
    pub fn density(&self, a: usize, b: usize, c: usize) -> f64 {
        let (s1, s2) = (self.psi1.values(), self.psi2.values());
        let (r, r2, r3) = self.coefs();
        s1[a] * s1[b] * s1[c]
            + r * (s2[a] * s2[b] * s1[c] + s1[a] * s2[b] * s2[c])
            + r2 * s2[a] * s1[b] * s2[c]
            + r3 * s2[a] * s2[b] * s2[c]
    }

    /// Marginal density of `Y₁`, which is `ψ₁`.
    pub fn p1(&self) -> &GridFn {
        &self.psi1
    }

    /// Density of `(Y₁, Y₂)` on the cell pair `(a, b)`: `ψ₁⊗ψ₁ + r ψ₂⊗ψ₂`.
    pub fn p2(&self, a: usize, b: usize) -> f64 {
        let (s1, s2) = (self.psi1.values(), self.psi2.values());
        s1[a] * s1[b] + self.r * s2[a] * s2[b]
    }

    /// The whole cube, indexed `(a * K + b) * K + c` with `K = 2^D`.
    pub fn tabulate(&self) -> Result<Vec<f64>> {
        let res = self.resolution();
        if res > MAX_TABULATED_RESOLUTION {
            return Err(Error::GridTooLarge(res));
        }
        let k = 1usize << res;
        let mut out = Vec::with_capacity(k * k * k);
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    out.push(self.density(a, b, c));
                }
            }
        }
        Ok(out)
    }

    /// `E[h₁(Y₁)]` by grid quadrature.
    pub fn expect1(&self, h: &GridFn) -> f64 {
        self.psi1.inner(h)
    }

    /// `E[h₁(Y₁) h₂(Y₂)]`, integrating each separable term of the density on the grid.
    pub fn expect2(&self, h1: &GridFn, h2: &GridFn) -> f64 {
        let (a1, a2) = (self.psi1.inner(h1), self.psi2.inner(h1));
        let (b1, b2) = (self.psi1.inner(h2), self.psi2.inner(h2));
        a1 * b1 + self.r * a2 * b2
    }

    /// `E[h₁(Y₁) h₂(Y₂) h₃(Y₃)]`, term by term.
    pub fn expect3(&self, h1: &GridFn, h2: &GridFn, h3: &GridFn) -> f64 {
        let (a1, a2) = (self.psi1.inner(h1), self.psi2.inner(h1));
        let (b1, b2) = (self.psi1.inner(h2), self.psi2.inner(h2));
        let (c1, c2) = (self.psi1.inner(h3), self.psi2.inner(h3));
        let (r, r2, r3) = self.coefs();
        a1 * b1 * c1 + r * (a2 * b2 * c1 + a1 * b2 * c2) + r2 * a2 * b1 * c2 + r3 * a2 * b2 * c2
    }
}

/// Value of the pseudo-distance `ρ` together with a degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoReport {
    pub value: f64,
    /// Set when either point has `φ₃ = 0`; the `ψ₂` term is then dropped.
    pub degenerate: bool,
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pseudo-distance `ρ` between two parameters, which controls the
/// Kullback-Leibler divergence between the corresponding HMM laws.
pub fn rho_pseudo_distance(a: &ReparamPoint, b: &ReparamPoint) -> RhoReport {
    let (ra, rb) = (a.r(), b.r());
    let (pa, pb) = (a.phi, b.phi);
    let (sign, psi2_term) = match (&a.psi2, &b.psi2) {
        (Some(u), Some(v)) => {
            let s = sgn(u.inner(v));
            let dist = u.lin_comb(1.0, v, -s).l2_norm();
            (s, Some(ra.abs().max(rb.abs()) * dist))
        }
        _ => (1.0, None),
    };
    let mut value = (ra - rb)
        .abs()
        .max((pa.phi2 * ra - pb.phi2 * rb).abs())
        .max((pa.phi1 * pa.phi2 * pa.phi3 * ra - sign * pb.phi1 * pb.phi2 * pb.phi3 * rb).abs())
        .max(a.psi1.l2_dist_sq(&b.psi1).sqrt());
    if let Some(t) = psi2_term {
        value = value.max(t);
    }
    RhoReport {
        value,
        degenerate: psi2_term.is_none(),
    }
}

/// Constants of the parameter class `Θ^{s₀,s₁}_{δ,ε,ζ}(R) ∩ Σ_{γ*}(L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub delta: f64,
    pub epsilon: f64,
    pub zeta: f64,
    pub s0: f64,
    pub s1: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub gamma_star: f64,
    #[serde(rename = "L")]
    pub sup_bound: f64,
}

impl ClassSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("delta", self.delta),
            ("epsilon", self.epsilon),
            ("zeta", self.zeta),
            ("s0", self.s0),
            ("s1", self.s1),
            ("R", self.radius),
            ("gamma_star", self.gamma_star),
        ] {
            if !(v > 0.0) {
                return Err(Error::param(name, format!("{v} must be positive")));
            }
        }
        if self.gamma_star > 1.0 {
            return Err(Error::param("gamma_star", "must be at most 1"));
        }
        if !(self.sup_bound >= 1.0) {
            return Err(Error::param("L", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Signed slack; non-negative exactly when the condition holds.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MembershipReport {
    pub checks: Vec<ConditionCheck>,
}

impl MembershipReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks each defining inequality of the class. Besov norms use the Haar
/// basis with `J = 0` at full depth.
pub fn class_membership(theta: &ModelParams, class: &ClassSpec) -> Result<MembershipReport> {
    class.validate()?;
    let (_, eps, zeta) = theta.frontier_distances();
    let depth = theta.resolution().checked_sub(1);
    let besov = |f: &DensityGrid, s: f64| -> Result<f64> {
        Ok(besov_norm(&analyze(f, Basis::Haar, 0, depth)?, s))
    };
    let b0 = besov(&theta.f0, class.s0)?;
    let b1 = besov(&theta.f1, class.s1)?;
    let at_least = |name, value: f64, bound: f64| ConditionCheck {
        name,
        passed: value >= bound,
        margin: value - bound,
    };
    let at_most = |name, value: f64, bound: f64| ConditionCheck {
        name,
        passed: value <= bound,
        margin: bound - value,
    };
    Ok(MembershipReport {
        checks: vec![
            at_least("p >= delta", theta.p, class.delta),
            at_least("q >= delta", theta.q, class.delta),
            at_least("|1-p-q| >= epsilon", eps, class.epsilon),
            at_least("||f0-f1|| >= zeta", zeta, class.zeta),
            at_most("besov(f0, s0) <= R", b0, class.radius),
            at_most("besov(f1, s1) <= R", b1, class.radius),
            at_most("sup f0 <= L", theta.f0.max_value(), class.sup_bound),
            at_most("sup f1 <= L", theta.f1.max_value(), class.sup_bound),
            at_least("spectral gap >= gamma_star", spectral_gap(theta), class.gamma_star),
        ],
    })
}
