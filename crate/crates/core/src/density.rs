//! Block-thresholded wavelet estimators of the two emission densities.
//!
//! Both estimators start from the coefficient estimates
//!
//! ```text
//! f̂±(e) = P⁽¹⁾(e) + (ω̂±/2) Ĝ(e),   Ĝ(e) = P⁽²⁾(ψ̃⊗e) − P⁽¹⁾(ψ̃) P⁽¹⁾(e)
//! ```
//!
//! for every basis function `e`. The smooth estimator thresholds blocks of
//! `f̂±` directly. The rough estimator writes `f̂± = α̂± + β̂±`, where `α̂±` is
//! a multiple of the marginal `ψ̂₁` and `β̂±` a multiple of the other density,
//! and thresholds the two parts separately.

use serde::Serialize;

use crate::empirical::{histogram_density, lagged_weighted_density};
use crate::error::{Error, Result};
use crate::grid::GridFn;
use crate::model::{reparametrize, ModelParams};
use crate::moments::{m_hat, moment_oracle, phi_hat, MomentTriple, PhiHat};
use crate::wavelets::{analyze, synthesize, Basis, BlockLayout, CoeffTree};

/// Tuning constants shared by both estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityConfig {
    /// Threshold multiplier `Γ`.
    pub gamma: f64,
    /// Upper truncation level `Ť`.
    pub t_check: f64,
    pub j0: u32,
    pub basis: Basis,
}

impl DensityConfig {
    pub fn new(gamma: f64, t_check: f64) -> Self {
        DensityConfig {
            gamma,
            t_check,
            j0: 0,
            basis: Basis::Haar,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::param("gamma", format!("{} must be non-negative", self.gamma)));
        }
        if !(self.t_check > 0.0) {
            return Err(Error::param("t_check", format!("{} must be positive", self.t_check)));
        }
        Ok(())
    }
}

/// `Γ = β √L · max(√(L/γ*), 1/γ*)`.
pub fn default_gamma(sup_bound: f64, gamma_star: f64, beta: f64) -> f64 {
    beta * sup_bound.sqrt() * (sup_bound / gamma_star).sqrt().max(1.0 / gamma_star)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Degeneracy {
    pub m1_zero: bool,
    pub m2_nonpositive: bool,
    pub phi1_plus_one: bool,
    pub phi1_minus_one: bool,
}

impl Degeneracy {
    pub fn any(&self) -> bool {
        self.m1_zero || self.m2_nonpositive || self.phi1_plus_one || self.phi1_minus_one
    }

    /// Compact `a|b` label of the set flags, empty when none is set.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.m1_zero {
            parts.push("m1_zero");
        }
        if self.m2_nonpositive {
            parts.push("m2_nonpos");
        }
        if self.phi1_plus_one {
            parts.push("phi1_plus_one");
        }
        if self.phi1_minus_one {
            parts.push("phi1_minus_one");
        }
        parts.join("|")
    }
}

/// Everything the estimators need from the data.
#[derive(Debug, Clone)]
pub struct CoefficientEstimates {
    pub layout: BlockLayout,
    pub basis: Basis,
    /// Grid on which the coefficients were computed and estimates are synthesized.
    pub resolution: u32,
    pub psi1_hat: CoeffTree,
    pub g_tree: CoeffTree,
    pub moments: MomentTriple,
    pub phi: PhiHat,
    pub g_hat: f64,
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub s_n: f64,
    pub t_n: f64,
    pub flags: Degeneracy,
}

impl CoefficientEstimates {
    fn assemble(
        layout: BlockLayout,
        basis: Basis,
        resolution: u32,
        psi1_hat: CoeffTree,
        g_tree: CoeffTree,
        moments: MomentTriple,
    ) -> Self {
        let phi = phi_hat(&moments);
        let m = moments;
        let flags = Degeneracy {
            m1_zero: m.m1 == 0.0,
            m2_nonpositive: !(m.m2 > 0.0),
            phi1_plus_one: phi.phi1 == 1.0,
            phi1_minus_one: phi.phi1 == -1.0,
        };
        let g_hat = if flags.m2_nonpositive { 0.0 } else { m.v().sqrt() / m.m2 };
        let (omega_plus, omega_minus) = if flags.m1_zero {
            (0.0, 0.0)
        } else {
            (g_hat * (1.0 - phi.phi1) / m.m1, -g_hat * (1.0 + phi.phi1) / m.m1)
        };
        let rate = base_rate(layout.n);
        let ratio = if flags.m1_zero { 0.0 } else { g_hat / m.m1.abs() };
        let s_n = if flags.m1_zero { 0.0 } else { rate * ratio.max(1.0) };
        let spread = 1.0 - phi.phi1 * phi.phi1;
        let inv_spread = if spread != 0.0 { 1.0 / spread } else { 0.0 };
        let t_n = rate * ratio.max(1.0).max(inv_spread);
        CoefficientEstimates {
            layout,
            basis,
            resolution,
            psi1_hat,
            g_tree,
            moments,
            phi,
            g_hat,
            omega_plus,
            omega_minus,
            s_n,
            t_n,
            flags,
        }
    }

    /// Pre-threshold coefficients `f̂₊` (`plus = true`) or `f̂₋`.
    pub fn f_hat(&self, plus: bool) -> CoeffTree {
        let omega = if plus { self.omega_plus } else { self.omega_minus };
        self.psi1_hat.lin_comb(1.0, &self.g_tree, 0.5 * omega)
    }

    /// `(α̂, β̂)` split of `f̂₊` or `f̂₋`.
    pub fn alpha_beta(&self, plus: bool) -> (CoeffTree, CoeffTree) {
        let phi1 = self.phi.phi1;
        let (num, den) = if plus { (1.0 - phi1, 1.0 + phi1) } else { (1.0 + phi1, 1.0 - phi1) };
        let (a, b) = if den != 0.0 { (2.0 / den, -num / den) } else { (0.0, 0.0) };
        let omega = if plus { self.omega_plus } else { self.omega_minus };
        (
            self.psi1_hat.scaled(a),
            self.psi1_hat.lin_comb(b, &self.g_tree, 0.5 * omega),
        )
    }
}

/// `√(log n / n)`.
pub fn base_rate(n: f64) -> f64 {
    (n.ln() / n).sqrt()
}

fn working_resolution(layout: &BlockLayout) -> u32 {
    layout.finest_level().map_or(layout.j0, |l| l + 1).max(layout.j0)
}

/// Empirical coefficients for every basis function up to the layout's finest level.
pub fn coefficient_estimates(
    observed: &[f64],
    psi_tilde: &GridFn,
    layout: &BlockLayout,
    basis: Basis,
) -> Result<CoefficientEstimates> {
    let moments = m_hat(observed, psi_tilde)?;
    let res = working_resolution(layout);
    let max = layout.finest_level();
    let n = observed.len() as f64;
    let p1_psi = observed.iter().map(|&y| psi_tilde.eval(y)).sum::<f64>() / n;
    let psi1_hat = analyze(&histogram_density(observed, res), basis, layout.j0, max)?;
    let lagged = analyze(&lagged_weighted_density(observed, psi_tilde, res), basis, layout.j0, max)?;
    let g_tree = lagged.lin_comb(1.0, &psi1_hat, -p1_psi);
    Ok(CoefficientEstimates::assemble(layout.clone(), basis, res, psi1_hat, g_tree, moments))
}

/// Population counterpart: expectations replace every empirical average.
pub fn population_coefficients(
    theta: &ModelParams,
    psi_tilde: &GridFn,
    layout: &BlockLayout,
    basis: Basis,
) -> Result<CoefficientEstimates> {
    let res = working_resolution(layout).max(theta.resolution());
    let max = layout.finest_level();
    let pt = reparametrize(theta);
    let psi1 = pt.psi1.refined(res);
    // the lag-one covariance kernel is r ψ₂⊗ψ₂
    let g_fn = match &pt.psi2 {
        Some(psi2) => psi2.refined(res).scaled(pt.r() * psi2.inner(psi_tilde)),
        None => GridFn::zeros(res),
    };
    let psi1_hat = analyze(&psi1, basis, layout.j0, max)?;
    let g_tree = analyze(&g_fn, basis, layout.j0, max)?;
    let moments = moment_oracle(theta, psi_tilde);
    Ok(CoefficientEstimates::assemble(layout.clone(), basis, res, psi1_hat, g_tree, moments))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Smooth,
    Rough,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Smooth,
    Alpha,
    Beta,
}

/// One keep-or-kill decision on a block of mother coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockDecision {
    pub level: u32,
    pub block: usize,
    pub rule: Rule,
    pub norm: f64,
    pub threshold: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityEstimate {
    pub kind: EstimatorKind,
    pub label: Label,
    /// Estimate truncated to `[0, Ť]`.
    #[serde(skip)]
    pub grid: GridFn,
    /// Estimate before truncation.
    #[serde(skip)]
    pub raw: GridFn,
    pub trace: Vec<BlockDecision>,
}

impl DensityEstimate {
    /// Kept blocks as `(level, block)` pairs, for one rule.
    pub fn kept_blocks(&self, rule: Rule) -> Vec<(u32, usize)> {
        self.trace
            .iter()
            .filter(|d| d.rule == rule && d.kept)
            .map(|d| (d.level, d.block))
            .collect()
    }

    pub fn trace_json(&self) -> String {
        serde_json::to_string(&self.trace).expect("trace serializes")
    }
}

fn block_norm(c: &[f64]) -> f64 {
    c.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Levels strictly below `J_n` and the fathers of `tree`, finer levels zeroed.
fn low_frequency(tree: &CoeffTree, layout: &BlockLayout) -> CoeffTree {
    let mut out = tree.clone();
    for level in layout.levels() {
        if let Some(c) = out.mother_mut(level) {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    out
}

fn finish(
    ce: &CoefficientEstimates,
    cfg: &DensityConfig,
    tree: &CoeffTree,
    kind: EstimatorKind,
    label: Label,
    trace: Vec<BlockDecision>,
) -> Result<DensityEstimate> {
    let raw = synthesize(tree, ce.basis, ce.resolution)?;
    let t = cfg.t_check;
    Ok(DensityEstimate {
        kind,
        label,
        grid: raw.map(|v| v.clamp(0.0, t)),
        raw,
        trace,
    })
}

fn require_valid(layout: &BlockLayout) -> Result<()> {
    if layout.valid {
        Ok(())
    } else {
        Err(Error::InvalidLayout {
            n: layout.n,
            j_n: layout.j_n,
            j_tilde: layout.j_tilde,
        })
    }
}

fn smooth_one(ce: &CoefficientEstimates, cfg: &DensityConfig, plus: bool) -> Result<DensityEstimate> {
    let full = ce.f_hat(plus);
    let layout = &ce.layout;
    let mut tree = low_frequency(&full, layout);
    let threshold = cfg.gamma * ce.s_n;
    let mut trace = Vec::new();
    for level in layout.levels() {
        let src = full.mother(level).expect("level within estimate");
        let dst = tree.mother_mut(level).expect("level within estimate");
        for (ell, range) in layout.blocks(level).enumerate() {
            let norm = block_norm(&src[range.clone()]);
            let kept = norm > threshold;
            if kept {
                dst[range.clone()].copy_from_slice(&src[range]);
            }
            trace.push(BlockDecision {
                level,
                block: ell,
                rule: Rule::Smooth,
                norm,
                threshold,
                kept,
            });
        }
    }
    let label = if plus { Label::Plus } else { Label::Minus };
    finish(ce, cfg, &tree, EstimatorKind::Smooth, label, trace)
}

fn rough_one(ce: &CoefficientEstimates, cfg: &DensityConfig, plus: bool) -> Result<DensityEstimate> {
    let layout = &ce.layout;
    let mut tree = low_frequency(&ce.f_hat(plus), layout);
    let (alpha, beta) = ce.alpha_beta(plus);
    let alpha_threshold = cfg.gamma * base_rate(layout.n);
    let beta_threshold = cfg.gamma * ce.t_n;
    let mut trace = Vec::new();
    for level in layout.levels() {
        let psi1 = ce.psi1_hat.mother(level).expect("level within estimate");
        let a = alpha.mother(level).expect("level within estimate");
        let b = beta.mother(level).expect("level within estimate");
        let dst = tree.mother_mut(level).expect("level within estimate");
        for (ell, range) in layout.blocks(level).enumerate() {
            let a_norm = block_norm(&psi1[range.clone()]);
            let b_norm = block_norm(&b[range.clone()]);
            let keep_a = a_norm > alpha_threshold;
            let keep_b = b_norm > beta_threshold;
            for k in range {
                dst[k] = if keep_a { a[k] } else { 0.0 } + if keep_b { b[k] } else { 0.0 };
            }
            trace.push(BlockDecision {
                level,
                block: ell,
                rule: Rule::Alpha,
                norm: a_norm,
                threshold: alpha_threshold,
                kept: keep_a,
            });
            trace.push(BlockDecision {
                level,
                block: ell,
                rule: Rule::Beta,
                norm: b_norm,
                threshold: beta_threshold,
                kept: keep_b,
            });
        }
    }
    let label = if plus { Label::Plus } else { Label::Minus };
    finish(ce, cfg, &tree, EstimatorKind::Rough, label, trace)
}

/// Smooth estimates `(f̌₊, f̌₋)` from precomputed coefficients.
pub fn smooth_from_coefficients(
    ce: &CoefficientEstimates,
    cfg: &DensityConfig,
) -> Result<(DensityEstimate, DensityEstimate)> {
    cfg.validate()?;
    require_valid(&ce.layout)?;
    Ok((smooth_one(ce, cfg, true)?, smooth_one(ce, cfg, false)?))
}

/// Rough estimates `(f̌ᴿ₊, f̌ᴿ₋)` from precomputed coefficients.
pub fn rough_from_coefficients(
    ce: &CoefficientEstimates,
    cfg: &DensityConfig,
) -> Result<(DensityEstimate, DensityEstimate)> {
    cfg.validate()?;
    require_valid(&ce.layout)?;
    Ok((rough_one(ce, cfg, true)?, rough_one(ce, cfg, false)?))
}

fn layout_for(observed: &[f64], tau: f64, cfg: &DensityConfig) -> Result<BlockLayout> {
    let layout = BlockLayout::new(observed.len(), tau, cfg.j0)?;
    require_valid(&layout)?;
    Ok(layout)
}

/// Smooth estimator on one path, with `n` the path length.
pub fn smooth_estimate(
    observed: &[f64],
    psi_tilde: &GridFn,
    tau: f64,
    cfg: &DensityConfig,
) -> Result<(DensityEstimate, DensityEstimate)> {
    cfg.validate()?;
    let layout = layout_for(observed, tau, cfg)?;
    smooth_from_coefficients(&coefficient_estimates(observed, psi_tilde, &layout, cfg.basis)?, cfg)
}

/// Rough estimator on one path, with `n` the path length.
pub fn rough_estimate(
    observed: &[f64],
    psi_tilde: &GridFn,
    tau: f64,
    cfg: &DensityConfig,
) -> Result<(DensityEstimate, DensityEstimate)> {
    cfg.validate()?;
    let layout = layout_for(observed, tau, cfg)?;
    rough_from_coefficients(&coefficient_estimates(observed, psi_tilde, &layout, cfg.basis)?, cfg)
}

/// Squared `L²` losses under the better of the two pairings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairLoss {
    pub loss_f0: f64,
    pub loss_f1: f64,
    /// `plus` was paired with `f₁` and `minus` with `f₀`.
    pub swapped: bool,
}

pub fn l2_loss_min_perm(plus: &GridFn, minus: &GridFn, f0: &GridFn, f1: &GridFn) -> PairLoss {
    let direct = (plus.l2_dist_sq(f0), minus.l2_dist_sq(f1));
    let swapped = (minus.l2_dist_sq(f0), plus.l2_dist_sq(f1));
    if swapped.0 + swapped.1 < direct.0 + direct.1 {
        PairLoss {
            loss_f0: swapped.0,
            loss_f1: swapped.1,
            swapped: true,
        }
    } else {
        PairLoss {
            loss_f0: direct.0,
            loss_f1: direct.1,
            swapped: false,
        }
    }
}
