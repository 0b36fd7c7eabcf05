use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hmm_frontier::density::{
    coefficient_estimates, l2_loss_min_perm, rough_from_coefficients, smooth_from_coefficients, DensityConfig,
    DensityEstimate,
};
use hmm_frontier::grid::GridFn;
use hmm_frontier::harness::config::{DirectionSource, Estimator, ExperimentConfig};
use hmm_frontier::harness::oracle::{oracle_check, OracleOptions};
use hmm_frontier::harness::presets::PRESETS;
use hmm_frontier::harness::rate::{fit_rate, Metric};
use hmm_frontier::harness::sweep::{read_csv, replication, run_sweep, sweep_meta, write_csv};
use hmm_frontier::moments::{estimate_q, frobenius_loss_min_perm};
use hmm_frontier::simulate::{sample_path, SeedRecord};
use hmm_frontier::wavelets::BlockLayout;

#[derive(Parser)]
#[command(name = "hmm-frontier", version, about = "Two-state HMM estimation near the i.i.d. frontier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one stationary path and write it as CSV (t, x, y).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Draw the 3n path used by the split3n direction source.
        #[arg(long)]
        split3n: bool,
    },
    /// Estimate the separating direction from one path and write it as a grid record.
    Direction(Common),
    /// Estimate the transition matrix from one replication.
    EstimateQ(Common),
    /// Run the smooth and rough density estimators on one replication.
    EstimateDensities {
        #[command(flatten)]
        common: Common,
        /// Write the per-block threshold decisions as well.
        #[arg(long)]
        trace: bool,
    },
    /// Monte-Carlo sweep over sample sizes and replications; writes a risk CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated estimators among q, smooth, rough, direction.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<Estimator>>,
        /// Record per-replication wall time (breaks byte-identical reruns).
        #[arg(long)]
        timing: bool,
    },
    /// Least-squares slope of log risk against log n.
    FitRate {
        /// Risk CSV written by `sweep`.
        input: PathBuf,
        #[arg(long, default_value = "q")]
        estimator: String,
        /// Fit the root of the mean loss instead of the mean loss.
        #[arg(long)]
        rmse: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare closed forms, quadrature and plug-in estimators on a model; exits 1 on any failure.
    OracleCheck {
        #[command(flatten)]
        model: ModelArgs,
        /// Grid records of extra directions to test.
        #[arg(long = "direction-file")]
        directions: Vec<PathBuf>,
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
        /// Perturb the closed-form third moment (negative control).
        #[arg(long, default_value_t = 0.0)]
        m3_corruption: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Model preset name.
    #[arg(long)]
    model: Option<String>,
    /// JSON model file `{"p", "q", "f0": {"D", "values"}, "f1": {..}}`.
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Grid resolution of a preset.
    #[arg(long)]
    resolution: Option<u32>,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Sample sizes, comma separated. Single-path commands use the first.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Replication index for single-path commands.
    #[arg(long, default_value_t = 0)]
    rep: usize,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long = "M")]
    m: Option<u32>,
    #[arg(long)]
    t_check: Option<f64>,
    #[arg(long)]
    direction: Option<DirectionSource>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl ModelArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        if let Some(f) = &self.model_file {
            cfg.model_file = Some(f.clone());
        }
        if let Some(r) = self.resolution {
            cfg.resolution = Some(r);
        }
    }
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => ExperimentConfig::new("theta-star", vec![4096], 1, 0, vec![Estimator::Q]),
        };
        self.model.apply(&mut cfg);
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.reps {
            cfg.reps = r;
        }
        if let Some(n) = &self.n {
            cfg.n = n.clone();
        }
        if let Some(g) = self.gamma {
            cfg.gamma = Some(g);
        }
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        if let Some(t) = self.tau {
            cfg.tau = Some(t);
        }
        if let Some(m) = self.m {
            cfg.m = m;
        }
        if let Some(t) = self.t_check {
            cfg.t_check = Some(t);
        }
        if let Some(d) = &self.direction {
            cfg.direction = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn first_n(cfg: &ExperimentConfig) -> usize {
        cfg.n[0]
    }
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn simulate(common: &Common, split: bool) -> Result<()> {
    let cfg = common.config()?;
    let theta = cfg.load_model()?;
    let n = Common::first_n(&cfg);
    let seed = SeedRecord::for_replication(cfg.seed, n, common.rep);
    let len = if split { 3 * n } else { n };
    let path = sample_path(&theta, len, seed)?;
    let mut w = sink(common.out.as_deref())?;
    path.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn direction(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let rep = replication(&cfg, Common::first_n(&cfg), common.rep)?;
    let mut w = sink(common.out.as_deref())?;
    writeln!(w, "{}", rep.direction.to_record())?;
    w.flush()?;
    if let Some(psi2) = hmm_frontier::model::reparametrize(&rep.theta).psi2 {
        eprintln!(
            "|<psi_tilde, psi2>| = {:.6}, leading eigenvalue = {:.6e}, degenerate = {}",
            rep.direction.grid.inner(&psi2).abs(),
            rep.direction.leading_eigenvalue,
            rep.direction.degenerate
        );
    }
    Ok(())
}

fn estimate_q_cmd(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let n = Common::first_n(&cfg);
    let rep = replication(&cfg, n, common.rep)?;
    let q = estimate_q(&rep.observed, &rep.direction.grid)?;
    let truth = rep.theta.transition_matrix();
    write_json(
        common.out.as_deref(),
        &serde_json::json!({
            "n": n,
            "rep": common.rep,
            "seed": cfg.seed,
            "direction": cfg.direction.to_string(),
            "estimate": q,
            "truth": truth,
            "loss_raw": frobenius_loss_min_perm(&q.q_raw, &truth),
            "loss_clamped": frobenius_loss_min_perm(&q.q, &truth),
        }),
    )
}

fn estimate_json(e: &DensityEstimate, trace: bool) -> Result<serde_json::Value> {
    let mut v = serde_json::json!({
        "label": e.label,
        "grid": serde_json::from_str::<serde_json::Value>(&e.grid.to_record())?,
    });
    if trace {
        v["trace"] = serde_json::from_str(&e.trace_json())?;
    }
    Ok(v)
}

fn estimate_densities(common: &Common, trace: bool) -> Result<()> {
    let cfg = common.config()?;
    let n = Common::first_n(&cfg);
    let rep = replication(&cfg, n, common.rep)?;
    let layout = BlockLayout::new(n, rep.tuning.tau, cfg.j0)?;
    let ce = coefficient_estimates(&rep.observed, &rep.direction.grid, &layout, cfg.basis)?;
    let dcfg = DensityConfig {
        gamma: rep.tuning.gamma,
        t_check: rep.tuning.t_check,
        j0: cfg.j0,
        basis: cfg.basis,
    };
    let mut out = serde_json::json!({
        "n": n,
        "rep": common.rep,
        "seed": cfg.seed,
        "tuning": rep.tuning,
        "flags": ce.flags.label(),
    });
    for (name, pair) in [
        ("smooth", smooth_from_coefficients(&ce, &dcfg)?),
        ("rough", rough_from_coefficients(&ce, &dcfg)?),
    ] {
        let loss = l2_loss_min_perm(&pair.0.grid, &pair.1.grid, rep.theta.f0(), rep.theta.f1());
        out[name] = serde_json::json!({
            "plus": estimate_json(&pair.0, trace)?,
            "minus": estimate_json(&pair.1, trace)?,
            "loss_f0": loss.loss_f0,
            "loss_f1": loss.loss_f1,
            "swapped": loss.swapped,
        });
    }
    write_json(common.out.as_deref(), &out)
}

fn sweep(common: &Common, estimators: Option<Vec<Estimator>>, timing: bool) -> Result<()> {
    let mut cfg = common.config()?;
    if let Some(e) = estimators {
        cfg.estimators = e;
    }
    cfg.timing |= timing;
    cfg.validate()?;
    let result = run_sweep(&cfg, common.threads)?;
    let mut w = sink(common.out.as_deref())?;
    write_csv(&result.records, &mut w)?;
    w.flush()?;
    if let Some(out) = &common.out {
        let mut meta = out.clone().into_os_string();
        meta.push(".meta.json");
        std::fs::write(&meta, sweep_meta(&cfg, &result.tuning))?;
    }
    Ok(())
}

fn fit_rate_cmd(input: &Path, estimator: &str, rmse: bool, out: Option<&Path>) -> Result<()> {
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let records = read_csv(file)?;
    let metric = if rmse { Metric::Rmse } else { Metric::MeanLoss };
    let fit = fit_rate(&records, estimator, metric)?;
    write_json(out, &serde_json::to_value(&fit)?)
}

fn oracle_cmd(
    model: &ModelArgs,
    directions: &[PathBuf],
    tolerance: f64,
    m3_corruption: f64,
    out: Option<&Path>,
) -> Result<bool> {
    let mut cfg = ExperimentConfig::new("theta-star", vec![4096], 1, 0, vec![Estimator::Q]);
    model.apply(&mut cfg);
    if cfg.model_file.is_none() && !PRESETS.contains(&cfg.model.as_str()) {
        bail!("unknown model preset `{}` (expected one of {})", cfg.model, PRESETS.join(", "));
    }
    let theta = cfg.load_model()?;
    let dirs = directions
        .iter()
        .map(|p| Ok(GridFn::from_record(&std::fs::read_to_string(p)?)?))
        .collect::<Result<Vec<_>>>()?;
    let opts = OracleOptions {
        tolerance,
        m3_corruption,
        ..OracleOptions::default()
    };
    let report = oracle_check(&theta, &dirs, &opts)?;
    for c in &report.checks {
        let status = if c.passed { "ok  " } else { "FAIL" };
        match (c.error, &c.note) {
            (Some(e), _) => eprintln!("{status} {:<28} {e:.3e}", c.name),
            (None, Some(note)) => eprintln!("skip {:<28} {note}", c.name),
            (None, None) => eprintln!("skip {}", c.name),
        }
    }
    write_json(out, &serde_json::to_value(&report)?)?;
    Ok(report.passed())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Simulate { common, split3n } => simulate(common, *split3n)?,
        Command::Direction(common) => direction(common)?,
        Command::EstimateQ(common) => estimate_q_cmd(common)?,
        Command::EstimateDensities { common, trace } => estimate_densities(common, *trace)?,
        Command::Sweep {
            common,
            estimators,
            timing,
        } => sweep(common, estimators.clone(), *timing)?,
        Command::FitRate {
            input,
            estimator,
            rmse,
            out,
        } => fit_rate_cmd(input, estimator, *rmse, out.as_deref())?,
        Command::OracleCheck {
            model,
            directions,
            tolerance,
            m3_corruption,
            out,
        } => {
            if !oracle_cmd(model, directions, *tolerance, *m3_corruption, out.as_deref())? {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
