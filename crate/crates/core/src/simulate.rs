//! Stationary sample paths of the two-state HMM.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{cell_index, fmt_f64, DensityGrid};
use crate::model::{stationary_distribution, ModelParams};

/// Seed of a single random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub stream: u64,
}

impl SeedRecord {
    pub fn new(master: u64, stream: u64) -> Self {
        SeedRecord { master, stream }
    }

    /// The stream of replication `rep` at sample size `n`.
    pub fn for_replication(master: u64, n: usize, rep: usize) -> Self {
        SeedRecord {
            master,
            stream: stream_id(master, n as u64, rep as u64),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream id mixed from `(master, n, rep)`.
pub fn stream_id(master: u64, n: u64, rep: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ n) ^ rep)
}

/// Hidden states and observations of one run of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub hidden: Vec<u8>,
    pub observed: Vec<f64>,
    pub seed: SeedRecord,
}

impl SamplePath {
    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    /// The sub-path of time indices `range` (0-based).
    pub fn segment(&self, range: std::ops::Range<usize>) -> SamplePath {
        SamplePath {
            hidden: self.hidden[range.clone()].to_vec(),
            observed: self.observed[range].to_vec(),
            seed: self.seed,
        }
    }

    /// Writes `t,x,y` rows with a header; `t` starts at 1.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,x,y")?;
        for (t, (x, y)) in self.hidden.iter().zip(&self.observed).enumerate() {
            writeln!(out, "{},{},{}", t + 1, x, fmt_f64(*y))?;
        }
        Ok(())
    }
}

/// Inverse-CDF sampler for a piecewise-constant density.
#[derive(Debug, Clone)]
pub struct GridSampler {
    resolution: u32,
    cumulative: Vec<f64>,
}

impl GridSampler {
    pub fn new(f: &DensityGrid) -> Self {
        let mut acc = 0.0;
        let cumulative = f
            .cell_masses()
            .into_iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        GridSampler {
            resolution: f.resolution(),
            cumulative,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = *self.cumulative.last().unwrap();
        let u = rng.random::<f64>() * total;
        let last = self.cumulative.len() - 1;
        let cell = self.cumulative.partition_point(|&c| c <= u).min(last);
        let width = 1.0 / self.cumulative.len() as f64;
        let y = (cell as f64 + rng.random::<f64>()) * width;
        // keep y inside the drawn cell despite rounding
        if cell_index(y, self.resolution) == cell {
            y
        } else {
            cell as f64 * width
        }
    }
}

/// Draws a path of length `n` from the stationary chain using `rng`.
pub fn sample_path_with<R: Rng + ?Sized>(theta: &ModelParams, n: usize, rng: &mut R) -> (Vec<u8>, Vec<f64>) {
    let samplers = [GridSampler::new(theta.f0()), GridSampler::new(theta.f1())];
    let (pi0, _) = stationary_distribution(theta);
    let (p, q) = (theta.p(), theta.q());
    let mut hidden = Vec::with_capacity(n);
    let mut observed = Vec::with_capacity(n);
    let mut x: u8 = if n > 0 && rng.random::<f64>() < pi0 { 0 } else { 1 };
    for t in 0..n {
        if t > 0 {
            let u = rng.random::<f64>();
            x = match x {
                0 if u < p => 1,
                1 if u < q => 0,
                s => s,
            };
        }
        hidden.push(x);
        observed.push(samplers[x as usize].sample(rng));
    }
    (hidden, observed)
}

pub fn sample_path(theta: &ModelParams, n: usize, seed: SeedRecord) -> Result<SamplePath> {
    if n == 0 {
        return Err(Error::param("n", "path length must be at least 1"));
    }
    let mut rng = seed.rng();
    let (hidden, observed) = sample_path_with(theta, n, &mut rng);
    Ok(SamplePath { hidden, observed, seed })
}

/// Draws one path of length `3n` and returns its first and last thirds.
pub fn split_3n(theta: &ModelParams, n: usize, seed: SeedRecord) -> Result<(SamplePath, SamplePath)> {
    let full = sample_path(theta, 3 * n, seed)?;
    Ok((full.segment(0..n), full.segment(2 * n..3 * n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridFn;
    use crate::stats::batch_means;

    fn theta_star() -> ModelParams {
        let h = GridFn::haar_step(3);
        let f1 = DensityGrid::try_from(GridFn::constant(3, 1.0).lin_comb(1.0, &h, 0.5)).unwrap();
        ModelParams::new(0.2, 0.3, DensityGrid::uniform(3), f1).unwrap()
    }

    #[test]
    fn deterministic_given_seed() {
        let theta = theta_star();
        let a = sample_path(&theta, 500, SeedRecord::new(7, 3)).unwrap();
        let b = sample_path(&theta, 500, SeedRecord::new(7, 3)).unwrap();
        let c = sample_path(&theta, 500, SeedRecord::new(7, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.observed, c.observed);
        assert!(a.observed.iter().all(|&y| (0.0..1.0).contains(&y)));
        assert!(sample_path(&theta, 0, SeedRecord::new(7, 3)).is_err());
    }

    #[test]
    fn stream_ids_differ_across_replications() {
        let ids: std::collections::HashSet<u64> = (0..1000).map(|r| stream_id(1, 1024, r)).collect();
        assert_eq!(ids.len(), 1000);
        assert_ne!(stream_id(1, 1024, 0), stream_id(1, 2048, 0));
    }

    #[test]
    fn fair_coin_transitions() {
        let u = DensityGrid::uniform(2);
        let theta = ModelParams::new(0.5, 0.5, u.clone(), u).unwrap();
        let n = 100_000;
        let path = sample_path(&theta, n, SeedRecord::new(11, 0)).unwrap();
        let mut counts = [[0.0f64; 2]; 2];
        for w in path.hidden.windows(2) {
            counts[w[0] as usize][w[1] as usize] += 1.0;
        }
        for row in counts {
            let total = row[0] + row[1];
            let sd = (0.25 / total).sqrt();
            assert!((row[1] / total - 0.5).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn stationary_frequency_theta_star() {
        let theta = theta_star();
        let path = sample_path(&theta, 100_000, SeedRecord::new(5, 9)).unwrap();
        let ind: Vec<f64> = path.hidden.iter().map(|&x| if x == 0 { 1.0 } else { 0.0 }).collect();
        let (mean, se) = batch_means(&ind, 32);
        assert!((mean - 0.6).abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn uniform_emission_passes_ks() {
        let theta = theta_star();
        let n = 10_000;
        let path = sample_path(&theta, 4 * n, SeedRecord::new(3, 1)).unwrap();
        let mut ys: Vec<f64> = path
            .hidden
            .iter()
            .zip(&path.observed)
            .filter(|(x, _)| **x == 0)
            .map(|(_, y)| *y)
            .take(n)
            .collect();
        assert_eq!(ys.len(), n);
        ys.sort_by(f64::total_cmp);
        let m = ys.len() as f64;
        let ks = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| (y - i as f64 / m).abs().max(((i + 1) as f64 / m - y).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 1.63 / m.sqrt(), "KS = {ks}");
    }

    #[test]
    fn cell_frequencies_match_masses() {
        let f = DensityGrid::normalized(3, vec![1.0, 3.0, 0.5, 2.0, 0.0, 1.5, 4.0, 0.25]).unwrap();
        let sampler = GridSampler::new(&f);
        let mut rng = SeedRecord::new(2, 2).rng();
        let n = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            counts[cell_index(sampler.sample(&mut rng), 3)] += 1;
        }
        assert_eq!(counts[4], 0);
        let chi2: f64 = f
            .cell_masses()
            .iter()
            .zip(counts)
            .filter(|(m, _)| **m > 0.0)
            .map(|(m, c)| {
                let e = m * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // upper 0.001 quantile of chi-square with 6 degrees of freedom
        assert!(chi2 < 22.458, "chi2 = {chi2}");
    }

    #[test]
    fn split_segments() {
        let theta = theta_star();
        let seed = SeedRecord::new(1, 1);
        let full = sample_path(&theta, 15, seed).unwrap();
        let (a, b) = split_3n(&theta, 5, seed).unwrap();
        assert_eq!(a.observed, full.observed[0..5]);
        assert_eq!(b.observed, full.observed[10..15]);
        assert_eq!(split_3n(&theta, 5, seed).unwrap(), (a, b));
    }

    #[test]
    fn split_segment_means_uncorrelated() {
        let u = DensityGrid::uniform(2);
        let f1 = DensityGrid::new(2, vec![2.0, 1.0, 0.5, 0.5]).unwrap();
        let theta = ModelParams::new(0.5, 0.5, u, f1).unwrap();
        let reps = 2000;
        let pairs: Vec<(f64, f64)> = (0..reps)
            .map(|r| {
                let (a, b) = split_3n(&theta, 50, SeedRecord::for_replication(4, 50, r)).unwrap();
                let mean = |p: &SamplePath| p.observed.iter().sum::<f64>() / p.len() as f64;
                (mean(&a), mean(&b))
            })
            .collect();
        let (ma, mb) = pairs.iter().fold((0.0, 0.0), |s, p| (s.0 + p.0, s.1 + p.1));
        let (ma, mb) = (ma / reps as f64, mb / reps as f64);
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (a, b) in &pairs {
            sab += (a - ma) * (b - mb);
            saa += (a - ma).powi(2);
            sbb += (b - mb).powi(2);
        }
        assert!((sab / (saa * sbb).sqrt()).abs() < 0.05);
    }

    #[test]
    fn first_and_last_observation_share_marginal() {
        let theta = theta_star();
        let (mut first, mut last) = ([0.0f64; 2], [0.0f64; 2]);
        let reps = 4000;
        for r in 0..reps {
            let path = sample_path(&theta, 20, SeedRecord::for_replication(8, 20, r)).unwrap();
            first[cell_index(path.observed[0], 1)] += 1.0;
            last[cell_index(path.observed[19], 1)] += 1.0;
        }
        // P(Y < 1/2) = 0.6·0.5 + 0.4·0.75 = 0.6
        let sd = (0.24 / reps as f64).sqrt();
        assert!((first[0] / reps as f64 - 0.6).abs() < 4.0 * sd);
        assert!((last[0] / reps as f64 - 0.6).abs() < 4.0 * sd);
    }

    #[test]
    fn csv_dump() {
        let path = sample_path(&theta_star(), 3, SeedRecord::new(1, 2)).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("t,x,y\n1,"));
    }
}
