//! Monte-Carlo sweeps over sample sizes and replications.

use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{
    coefficient_estimates, default_gamma, l2_loss_min_perm, rough_from_coefficients, smooth_from_coefficients,
    DensityConfig, DensityEstimate,
};
use crate::error::{Error, Result};
use crate::grid::{fmt_f64, GridFn};
use crate::model::{reparametrize, spectral_gap, ModelParams};
use crate::moments::{estimate_q, frobenius_loss_min_perm};
use crate::separation::{psi_tilde_from_path, SeparatingDirection, SeparationConfig};
use crate::simulate::{sample_path, split_3n, SeedRecord};
use crate::wavelets::BlockLayout;

use super::config::{DirectionSource, Estimator, ExperimentConfig};

/// One row of sweep output.
///
/// The replication is reproduced by `SeedRecord::for_replication(seed, n, rep)`
/// together with the sweep's configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRecord {
    pub n: usize,
    pub delta: f64,
    pub eps: f64,
    pub zeta: f64,
    pub rep: usize,
    pub seed: u64,
    pub estimator: String,
    pub loss_raw: f64,
    pub loss_clamped_or_truncated: f64,
    pub degeneracy_flags: String,
    pub wall_time: f64,
}

pub const CSV_HEADER: [&str; 11] = [
    "n",
    "delta",
    "eps",
    "zeta",
    "rep",
    "seed",
    "estimator",
    "loss_raw",
    "loss_clamped_or_truncated",
    "degeneracy_flags",
    "wall_time",
];

/// Tuning constants after defaults have been filled in from the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedTuning {
    pub tau: f64,
    pub gamma: f64,
    pub t_check: f64,
    pub sup_bound: f64,
    pub gamma_star: f64,
}

pub fn resolve_tuning(cfg: &ExperimentConfig, theta: &ModelParams, direction: Option<&GridFn>) -> ResolvedTuning {
    let sup_bound = theta.f0().max_value().max(theta.f1().max_value());
    let gamma_star = spectral_gap(theta);
    let tau = cfg.tau.unwrap_or_else(|| match (&cfg.direction, direction) {
        (DirectionSource::Split3n, _) | (_, None) => 4.0,
        (_, Some(d)) => d.sup_norm().max(1.0),
    });
    ResolvedTuning {
        tau,
        gamma: cfg.gamma.unwrap_or_else(|| default_gamma(sup_bound, gamma_star, cfg.beta)),
        t_check: cfg.t_check.unwrap_or(sup_bound),
        sup_bound,
        gamma_star,
    }
}

/// The fixed direction for `oracle` and `file:` sources.
pub fn fixed_direction(cfg: &ExperimentConfig, theta: &ModelParams) -> Result<Option<GridFn>> {
    match &cfg.direction {
        DirectionSource::Oracle => {
            let psi2 = reparametrize(theta)
                .psi2
                .ok_or_else(|| Error::Config("oracle direction is undefined when f0 = f1".into()))?;
            Ok(Some(psi2))
        }
        DirectionSource::File(path) => {
            let d = SeparatingDirection::from_record(&std::fs::read_to_string(path)?, 1.0)?;
            Ok(Some(d.grid))
        }
        DirectionSource::Split3n => Ok(None),
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    theta: &'a ModelParams,
    psi2: Option<GridFn>,
    fixed: Option<GridFn>,
    tuning: ResolvedTuning,
    distances: (f64, f64, f64),
}

fn density_losses(
    pair: &(DensityEstimate, DensityEstimate),
    theta: &ModelParams,
) -> (f64, f64) {
    let raw = l2_loss_min_perm(&pair.0.raw, &pair.1.raw, theta.f0(), theta.f1());
    let trunc = l2_loss_min_perm(&pair.0.grid, &pair.1.grid, theta.f0(), theta.f1());
    (raw.loss_f0, trunc.loss_f0)
}

/// Separation settings of a sweep with its resolved `τ`.
pub fn separation_config(cfg: &ExperimentConfig, tau: f64) -> SeparationConfig {
    SeparationConfig {
        m: cfg.m,
        tau,
        j0: cfg.j0,
        basis: cfg.basis,
        resolution: None,
    }
}

fn draw(ctx: &Context, n: usize, rep: usize) -> Result<(Vec<f64>, SeparatingDirection)> {
    let seed = SeedRecord::for_replication(ctx.cfg.seed, n, rep);
    Ok(match &ctx.fixed {
        Some(d) => (
            sample_path(ctx.theta, n, seed)?.observed,
            SeparatingDirection::from_grid(d.clone(), ctx.tuning.tau)?,
        ),
        None => {
            let (train, est) = split_3n(ctx.theta, n, seed)?;
            let sep = separation_config(ctx.cfg, ctx.tuning.tau);
            (est.observed, psi_tilde_from_path(&train.observed, &sep)?)
        }
    })
}

/// Inputs of one replication: the estimation path and the direction used on it.
#[derive(Debug, Clone)]
pub struct Replication {
    pub theta: ModelParams,
    pub observed: Vec<f64>,
    pub direction: SeparatingDirection,
    pub tuning: ResolvedTuning,
}

/// Regenerates replication `rep` at sample size `n` exactly as [`run_sweep`] draws it.
pub fn replication(cfg: &ExperimentConfig, n: usize, rep: usize) -> Result<Replication> {
    let theta = cfg.load_model()?;
    let fixed = fixed_direction(cfg, &theta)?;
    let tuning = resolve_tuning(cfg, &theta, fixed.as_ref());
    let ctx = Context {
        cfg,
        theta: &theta,
        psi2: None,
        fixed,
        tuning,
        distances: (0.0, 0.0, 0.0),
    };
    let (observed, direction) = draw(&ctx, n, rep)?;
    Ok(Replication {
        theta,
        observed,
        direction,
        tuning,
    })
}

fn run_replication(ctx: &Context, n: usize, rep: usize) -> Result<Vec<RiskRecord>> {
    let start = Instant::now();
    let cfg = ctx.cfg;
    let (observed, direction) = draw(ctx, n, rep)?;
    let psi = &direction.grid;
    let needs_density = cfg.estimators.iter().any(|e| matches!(e, Estimator::Smooth | Estimator::Rough));
    let coefficients = if needs_density {
        let layout = BlockLayout::new(n, ctx.tuning.tau, cfg.j0)?;
        Some(coefficient_estimates(&observed, psi, &layout, cfg.basis)?)
    } else {
        None
    };
    let dcfg = DensityConfig {
        gamma: ctx.tuning.gamma,
        t_check: ctx.tuning.t_check,
        j0: cfg.j0,
        basis: cfg.basis,
    };
    let q_true = ctx.theta.transition_matrix();
    let mut rows = Vec::with_capacity(cfg.estimators.len());
    for est in &cfg.estimators {
        let (loss_raw, loss_post, flags) = match est {
            Estimator::Q => {
                let q = estimate_q(&observed, psi)?;
                let phi = q.flags.expect("set by estimate_q");
                let mut f = Vec::new();
                if phi.v_zero {
                    f.push("v_zero");
                }
                if phi.m1_zero {
                    f.push("m1_zero");
                }
                (
                    frobenius_loss_min_perm(&q.q_raw, &q_true),
                    frobenius_loss_min_perm(&q.q, &q_true),
                    f.join("|"),
                )
            }
            Estimator::Direction => {
                let loss = match &ctx.psi2 {
                    Some(p) => 2.0 - 2.0 * psi.inner(p).abs(),
                    None => f64::NAN,
                };
                let flag = if direction.degenerate { "degenerate" } else { "" };
                (loss, loss, flag.to_string())
            }
            Estimator::Smooth | Estimator::Rough => {
                let ce = coefficients.as_ref().expect("computed above");
                let pair = if *est == Estimator::Smooth {
                    smooth_from_coefficients(ce, &dcfg)?
                } else {
                    rough_from_coefficients(ce, &dcfg)?
                };
                let (raw, trunc) = density_losses(&pair, ctx.theta);
                (raw, trunc, ce.flags.label())
            }
        };
        rows.push(RiskRecord {
            n,
            delta: ctx.distances.0,
            eps: ctx.distances.1,
            zeta: ctx.distances.2,
            rep,
            seed: cfg.seed,
            estimator: est.name().to_string(),
            loss_raw,
            loss_clamped_or_truncated: loss_post,
            degeneracy_flags: flags,
            wall_time: 0.0,
        });
    }
    if cfg.timing {
        let t = start.elapsed().as_secs_f64();
        rows.iter_mut().for_each(|r| r.wall_time = t);
    }
    Ok(rows)
}

/// Output of [`run_sweep`]: rows ordered by `(n, rep, estimator)`.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub records: Vec<RiskRecord>,
    pub tuning: ResolvedTuning,
}

/// Runs every `(n, rep)` pair, in parallel on `threads` workers (all cores when `None`).
pub fn run_sweep(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<SweepOutput> {
    cfg.validate()?;
    let theta = cfg.load_model()?;
    let fixed = fixed_direction(cfg, &theta)?;
    let tuning = resolve_tuning(cfg, &theta, fixed.as_ref());
    let ctx = Context {
        cfg,
        theta: &theta,
        psi2: reparametrize(&theta).psi2,
        fixed,
        tuning,
        distances: theta.frontier_distances(),
    };
    let jobs: Vec<(usize, usize)> = cfg
        .n
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |r| (n, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let chunks: Vec<Result<Vec<RiskRecord>>> =
        pool.install(|| jobs.par_iter().map(|&(n, r)| run_replication(&ctx, n, r)).collect());
    let mut records = Vec::with_capacity(jobs.len() * cfg.estimators.len());
    for c in chunks {
        records.extend(c?);
    }
    Ok(SweepOutput { records, tuning })
}

/// JSON sidecar describing how a CSV was produced.
pub fn sweep_meta(cfg: &ExperimentConfig, tuning: &ResolvedTuning) -> String {
    serde_json::to_string_pretty(&serde_json::json!({
        "config": cfg,
        "tuning": tuning,
        "columns": CSV_HEADER,
        "crate_version": env!("CARGO_PKG_VERSION"),
    }))
    .expect("metadata serializes")
}

pub fn write_csv<W: Write>(records: &[RiskRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Record(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        w.write_record([
            r.n.to_string(),
            fmt_f64(r.delta),
            fmt_f64(r.eps),
            fmt_f64(r.zeta),
            r.rep.to_string(),
            r.seed.to_string(),
            r.estimator.clone(),
            fmt_f64(r.loss_raw),
            fmt_f64(r.loss_clamped_or_truncated),
            r.degeneracy_flags.clone(),
            fmt_f64(r.wall_time),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<RiskRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| Error::Record(e.to_string()))?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(Error::Record(format!("unexpected header `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Record(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row() {
        let mut cfg = ExperimentConfig::new("theta-star", vec![1024], 1, 3, vec![Estimator::Q]);
        cfg.direction = DirectionSource::Oracle;
        let out = run_sweep(&cfg, Some(1)).unwrap();
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!((r.n, r.rep, r.estimator.as_str()), (1024, 0, "q"));
        assert!(r.loss_clamped_or_truncated >= 0.0);
        assert!((r.delta - 0.2).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip_and_determinism() {
        let mut cfg = ExperimentConfig::new(
            "theta-star",
            vec![512, 1024],
            3,
            5,
            vec![Estimator::Q, Estimator::Direction, Estimator::Smooth, Estimator::Rough],
        );
        cfg.tau = Some(1.0);
        let a = run_sweep(&cfg, Some(1)).unwrap();
        let b = run_sweep(&cfg, Some(4)).unwrap();
        assert_eq!(a.records.len(), 2 * 3 * 4);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_csv(&a.records, &mut x).unwrap();
        write_csv(&b.records, &mut y).unwrap();
        assert_eq!(x, y);
        let text = String::from_utf8(x.clone()).unwrap();
        assert!(text.starts_with(&CSV_HEADER.join(",")));
        let back = read_csv(&x[..]).unwrap();
        assert_eq!(back, a.records);
    }

    #[test]
    fn replication_rerun_in_isolation() {
        let mut cfg = ExperimentConfig::new("theta-star", vec![512, 1024], 4, 8, vec![Estimator::Q]);
        cfg.direction = DirectionSource::Oracle;
        let all = run_sweep(&cfg, None).unwrap().records;
        let row = &all[6];
        let mut single = cfg.clone();
        single.n = vec![row.n];
        let again = run_sweep(&single, Some(1)).unwrap().records;
        assert_eq!(again[row.rep], *row);
    }

    #[test]
    fn invalid_layout_surfaces() {
        let mut cfg = ExperimentConfig::new("theta-star", vec![16], 1, 1, vec![Estimator::Smooth]);
        cfg.direction = DirectionSource::Oracle;
        assert!(matches!(run_sweep(&cfg, Some(1)), Err(Error::InvalidLayout { .. })));
    }

    #[test]
    fn meta_mentions_tuning() {
        let cfg = ExperimentConfig::new("theta-star", vec![1024], 1, 3, vec![Estimator::Q]);
        let out = run_sweep(&cfg, Some(1)).unwrap();
        let meta: serde_json::Value = serde_json::from_str(&sweep_meta(&cfg, &out.tuning)).unwrap();
        assert_eq!(meta["tuning"]["tau"], 4.0);
        assert_eq!(meta["config"]["direction"], "split3n");
    }

    #[test]
    fn replication_matches_sweep_row() {
        let cfg = ExperimentConfig::new("theta-star", vec![2048], 3, 11, vec![Estimator::Q]);
        let rows = run_sweep(&cfg, Some(2)).unwrap().records;
        let rep = replication(&cfg, 2048, 2).unwrap();
        let q = estimate_q(&rep.observed, &rep.direction.grid).unwrap();
        let loss = frobenius_loss_min_perm(&q.q, &rep.theta.transition_matrix());
        assert_eq!(loss.to_bits(), rows[2].loss_clamped_or_truncated.to_bits());
    }

    #[test]
    fn header_is_checked() {
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
