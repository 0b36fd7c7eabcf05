//! Log-log rate fits on sweep output.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::ols;

use super::sweep::RiskRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// `log(mean loss)`.
    #[default]
    MeanLoss,
    /// `log(√mean loss)`, half the mean-loss slope.
    Rmse,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub estimator: String,
    pub metric: Metric,
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    /// `(n, mean loss)` for each sample size.
    pub points: Vec<(usize, f64)>,
}

/// Least-squares slope of the log risk against `log n` for one estimator,
/// using the `loss_clamped_or_truncated` column.
pub fn fit_rate(records: &[RiskRecord], estimator: &str, metric: Metric) -> Result<RateFit> {
    let mut by_n: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.estimator == estimator) {
        let e = by_n.entry(r.n).or_default();
        e.0 += r.loss_clamped_or_truncated;
        e.1 += 1;
    }
    if by_n.len() < 2 {
        return Err(Error::Record(format!(
            "need rows at two or more sample sizes for `{estimator}`, found {}",
            by_n.len()
        )));
    }
    let points: Vec<(usize, f64)> = by_n.into_iter().map(|(n, (s, c))| (n, s / c as f64)).collect();
    let x: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let y: Vec<f64> = points
        .iter()
        .map(|p| match metric {
            Metric::MeanLoss => p.1.ln(),
            Metric::Rmse => 0.5 * p.1.ln(),
        })
        .collect();
    let fit = ols(&x, &y);
    Ok(RateFit {
        estimator: estimator.to_string(),
        metric,
        slope: fit.slope,
        intercept: fit.intercept,
        stderr: fit.stderr,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(loss: impl Fn(f64) -> f64) -> Vec<RiskRecord> {
        (10..=16)
            .flat_map(|k| {
                let n = 1usize << k;
                (0..3).map(move |rep| (n, rep))
            })
            .map(|(n, rep)| RiskRecord {
                n,
                delta: 0.2,
                eps: 0.5,
                zeta: 0.5,
                rep,
                seed: 1,
                estimator: "q".into(),
                loss_raw: loss(n as f64),
                loss_clamped_or_truncated: loss(n as f64),
                degeneracy_flags: String::new(),
                wall_time: 0.0,
            })
            .collect()
    }

    #[test]
    fn exact_power_laws() {
        let fit = fit_rate(&rows(|n| 3.0 / n), "q", Metric::MeanLoss).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        let fit = fit_rate(&rows(|n| 3.0 / n.sqrt()), "q", Metric::MeanLoss).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        let fit = fit_rate(&rows(|n| 3.0 / n), "q", Metric::Rmse).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert_eq!(fit.points.len(), 7);
    }

    #[test]
    fn missing_estimator() {
        assert!(fit_rate(&rows(|n| 1.0 / n), "smooth", Metric::MeanLoss).is_err());
    }
}
