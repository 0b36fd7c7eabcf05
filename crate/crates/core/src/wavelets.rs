//! Orthonormal wavelet analysis on the dyadic grid, the `B^s_{2,∞}` norm, and
//! the block bookkeeping used by the thresholded density estimators.
//!
//! Coefficients are `L^2[0,1]` inner products. A grid function of resolution
//! `R` is identified with the vector `values * 2^{-R/2}`, so an orthonormal
//! discrete transform of that vector yields exactly the inner products with
//! the (piecewise-constant) basis functions.
//!
//! The Haar basis is the default: its basis functions do not depend on the
//! working resolution, so every coefficient of a grid density is exact. The
//! periodized Daubechies-4 filter bank is also available; its basis functions
//! are the discrete ones at the chosen working resolution.

use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fmt_f64, GridFn};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Daubechies-4 low-pass filter.
const D4: [f64; 4] = [
    0.482_962_913_144_534_1,
    0.836_516_303_737_807_9,
    0.224_143_868_042_013_4,
    -0.129_409_522_551_260_4,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Basis {
    #[default]
    Haar,
    /// Periodized Daubechies-4 (two vanishing moments).
    Daubechies4,
}

impl Basis {
    fn forward_step(self, x: &[f64], approx: &mut [f64], detail: &mut [f64]) {
        let m = approx.len();
        match self {
            Basis::Haar => {
                for k in 0..m {
                    let (a, b) = (x[2 * k], x[2 * k + 1]);
                    approx[k] = (a + b) * FRAC_1_SQRT_2;
                    detail[k] = (a - b) * FRAC_1_SQRT_2;
                }
            }
            Basis::Daubechies4 => {
                let n = x.len();
                for k in 0..m {
                    let (mut a, mut d) = (0.0, 0.0);
                    for (i, &h) in D4.iter().enumerate() {
                        let v = x[(2 * k + i) % n];
                        a += h * v;
                        d += d4_high(i) * v;
                    }
                    approx[k] = a;
                    detail[k] = d;
                }
            }
        }
    }

    fn inverse_step(self, approx: &[f64], detail: &[f64], out: &mut [f64]) {
        let m = approx.len();
        match self {
            Basis::Haar => {
                for k in 0..m {
                    out[2 * k] = (approx[k] + detail[k]) * FRAC_1_SQRT_2;
                    out[2 * k + 1] = (approx[k] - detail[k]) * FRAC_1_SQRT_2;
                }
            }
            Basis::Daubechies4 => {
                let n = out.len();
                out.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..m {
                    for (i, &h) in D4.iter().enumerate() {
                        out[(2 * k + i) % n] += h * approx[k] + d4_high(i) * detail[k];
                    }
                }
            }
        }
    }
}

#[inline]
fn d4_high(i: usize) -> f64 {
    let h = D4[3 - i];
    if i % 2 == 0 {
        h
    } else {
        -h
    }
}

/// Father/mother index into a [`CoeffTree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WaveletIndex {
    Father { level: u32, k: usize },
    Mother { level: u32, k: usize },
}

impl WaveletIndex {
    pub fn level(&self) -> u32 {
        match *self {
            WaveletIndex::Father { level, .. } | WaveletIndex::Mother { level, .. } => level,
        }
    }

    pub fn position(&self) -> usize {
        match *self {
            WaveletIndex::Father { k, .. } | WaveletIndex::Mother { k, .. } => k,
        }
    }
}

/// Wavelet coefficients: `2^J` father coefficients plus mother levels `J..=max_level`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTree {
    j0: u32,
    father: Vec<f64>,
    /// `mother[i]` holds level `j0 + i`.
    mother: Vec<Vec<f64>>,
}

impl CoeffTree {
    /// All-zero tree with mother levels `j0..=max_level` (none if `max_level < j0`).
    pub fn zeros(j0: u32, max_level: Option<u32>) -> Self {
        let mother = match max_level {
            Some(m) if m >= j0 => (j0..=m).map(|j| vec![0.0; 1usize << j]).collect(),
            _ => Vec::new(),
        };
        CoeffTree {
            j0,
            father: vec![0.0; 1usize << j0],
            mother,
        }
    }

    pub fn from_parts(j0: u32, father: Vec<f64>, mother: Vec<Vec<f64>>) -> Result<Self> {
        if father.len() != 1usize << j0 {
            return Err(Error::param("father", format!("expected {} coefficients", 1usize << j0)));
        }
        for (i, level) in mother.iter().enumerate() {
            if level.len() != 1usize << (j0 + i as u32) {
                return Err(Error::param("mother", format!("level {} has wrong length", j0 + i as u32)));
            }
        }
        Ok(CoeffTree { j0, father, mother })
    }

    #[inline]
    pub fn j0(&self) -> u32 {
        self.j0
    }

    /// Finest mother level, or `None` if only father coefficients are stored.
    pub fn max_level(&self) -> Option<u32> {
        (!self.mother.is_empty()).then(|| self.j0 + self.mother.len() as u32 - 1)
    }

    pub fn father(&self) -> &[f64] {
        &self.father
    }

    pub fn father_mut(&mut self) -> &mut [f64] {
        &mut self.father
    }

    /// Mother coefficients at `level`, or `None` if outside the stored range.
    pub fn mother(&self, level: u32) -> Option<&[f64]> {
        level
            .checked_sub(self.j0)
            .and_then(|i| self.mother.get(i as usize))
            .map(Vec::as_slice)
    }

    pub fn mother_mut(&mut self, level: u32) -> Option<&mut [f64]> {
        level
            .checked_sub(self.j0)
            .and_then(|i| self.mother.get_mut(i as usize))
            .map(Vec::as_mut_slice)
    }

    /// `(level, coefficients)` for each stored mother level, coarse to fine.
    pub fn mother_levels(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.mother
            .iter()
            .enumerate()
            .map(move |(i, c)| (self.j0 + i as u32, c.as_slice()))
    }

    pub fn get(&self, idx: WaveletIndex) -> f64 {
        match idx {
            WaveletIndex::Father { k, .. } => self.father[k],
            WaveletIndex::Mother { level, k } => self.mother(level).map_or(0.0, |c| c[k]),
        }
    }

    /// Coefficient count in level order (fathers, then mothers coarse to fine).
    pub fn len(&self) -> usize {
        self.father.len() + self.mother.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Level-ordered flat vector of every coefficient.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.father);
        for level in &self.mother {
            v.extend_from_slice(level);
        }
        v
    }

    /// Inverse of [`CoeffTree::to_flat`].
    pub fn from_flat(j0: u32, max_level: Option<u32>, flat: &[f64]) -> Result<Self> {
        let mut tree = CoeffTree::zeros(j0, max_level);
        if flat.len() != tree.len() {
            return Err(Error::param("flat", format!("expected {} coefficients", tree.len())));
        }
        let (f, mut rest) = flat.split_at(tree.father.len());
        tree.father.copy_from_slice(f);
        for level in &mut tree.mother {
            let (head, tail) = rest.split_at(level.len());
            level.copy_from_slice(head);
            rest = tail;
        }
        Ok(tree)
    }

    /// Indices in the same order as [`CoeffTree::to_flat`].
    pub fn indices(&self) -> Vec<WaveletIndex> {
        let mut v: Vec<_> = (0..self.father.len())
            .map(|k| WaveletIndex::Father { level: self.j0, k })
            .collect();
        for (level, c) in self.mother_levels() {
            v.extend((0..c.len()).map(|k| WaveletIndex::Mother { level, k }));
        }
        v
    }

    /// Keeps mother levels `<= level`; `None` keeps only the fathers.
    pub fn truncated(&self, level: Option<u32>) -> CoeffTree {
        let keep = match level {
            Some(l) if l >= self.j0 => ((l - self.j0 + 1) as usize).min(self.mother.len()),
            _ => 0,
        };
        CoeffTree {
            j0: self.j0,
            father: self.father.clone(),
            mother: self.mother[..keep].to_vec(),
        }
    }

    /// Element-wise `a * self + b * other`. Both trees must share `j0` and `max_level`.
    pub fn lin_comb(&self, a: f64, other: &CoeffTree, b: f64) -> CoeffTree {
        assert_eq!(self.j0, other.j0, "trees start at different levels");
        assert_eq!(self.mother.len(), other.mother.len(), "trees have different depths");
        let comb = |x: &[f64], y: &[f64]| -> Vec<f64> {
            x.iter().zip(y).map(|(u, v)| a * u + b * v).collect()
        };
        CoeffTree {
            j0: self.j0,
            father: comb(&self.father, &other.father),
            mother: self
                .mother
                .iter()
                .zip(&other.mother)
                .map(|(x, y)| comb(x, y))
                .collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> CoeffTree {
        CoeffTree {
            j0: self.j0,
            father: self.father.iter().map(|v| a * v).collect(),
            mother: self
                .mother
                .iter()
                .map(|l| l.iter().map(|v| a * v).collect())
                .collect(),
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.father.iter().map(|c| c * c).sum::<f64>()
            + self
                .mother
                .iter()
                .flatten()
                .map(|c| c * c)
                .sum::<f64>()
    }

    pub fn max_abs_diff(&self, other: &CoeffTree) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Level-ordered text dump, one line per level. Debugging aid only.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, label: String, c: &[f64]| {
            let vals: Vec<String> = c.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(s, "{label}: {}", vals.join(" ")).unwrap();
        };
        row(&mut s, format!("father J={}", self.j0), &self.father);
        for (level, c) in self.mother_levels() {
            row(&mut s, format!("mother j={level}"), c);
        }
        s
    }
}

/// Wavelet coefficients of a grid function, keeping mother levels `j0..=max_level`.
/// `None` keeps the father coefficients only.
///
/// `max_level` may be at most `resolution - 1`; with `max_level = resolution - 1`
/// the tree is a complete orthonormal expansion (Parseval holds exactly).
pub fn analyze(f: &GridFn, basis: Basis, j0: u32, max_level: Option<u32>) -> Result<CoeffTree> {
    let res = f.resolution();
    if j0 > res {
        return Err(Error::LevelOverflow { level: j0, max: res });
    }
    if let Some(m) = max_level {
        if m + 1 > res {
            return Err(Error::LevelOverflow {
                level: m,
                max: res.saturating_sub(1),
            });
        }
    }
    let scale = (f.cells() as f64).sqrt().recip();
    let mut cur: Vec<f64> = f.values().iter().map(|v| v * scale).collect();
    let mut details: Vec<Vec<f64>> = Vec::with_capacity((res - j0) as usize);
    for _ in j0..res {
        let m = cur.len() / 2;
        let mut approx = vec![0.0; m];
        let mut detail = vec![0.0; m];
        basis.forward_step(&cur, &mut approx, &mut detail);
        details.push(detail);
        cur = approx;
    }
    // details were produced fine-to-coarse
    details.reverse();
    let mut tree = CoeffTree {
        j0,
        father: cur,
        mother: details,
    };
    if max_level.map_or(true, |m| m + 1 < res) {
        tree = tree.truncated(max_level);
    }
    Ok(tree)
}

/// Reconstructs the grid function at `resolution` from a (possibly partial) tree.
///
/// Missing finer levels are treated as zero, so a truncated tree yields the
/// projection onto the retained levels.
pub fn synthesize(tree: &CoeffTree, basis: Basis, resolution: u32) -> Result<GridFn> {
    if resolution < tree.j0 {
        return Err(Error::LevelOverflow {
            level: tree.j0,
            max: resolution,
        });
    }
    if let Some(m) = tree.max_level() {
        if m + 1 > resolution {
            return Err(Error::LevelOverflow {
                level: m,
                max: resolution.saturating_sub(1),
            });
        }
    }
    let mut cur = tree.father.clone();
    for level in tree.j0..resolution {
        let zeros;
        let detail = match tree.mother(level) {
            Some(d) => d,
            None => {
                zeros = vec![0.0; 1usize << level];
                &zeros[..]
            }
        };
        let mut out = vec![0.0; cur.len() * 2];
        basis.inverse_step(&cur, detail, &mut out);
        cur = out;
    }
    let scale = ((1usize << resolution) as f64).sqrt();
    cur.iter_mut().for_each(|v| *v *= scale);
    GridFn::new(resolution, cur)
}

/// The basis function `e_λ` as a grid function at `resolution`.
pub fn basis_function(basis: Basis, j0: u32, idx: WaveletIndex, resolution: u32) -> Result<GridFn> {
    let max = match idx {
        WaveletIndex::Father { .. } => None,
        WaveletIndex::Mother { level, .. } => Some(level),
    };
    let mut tree = CoeffTree::zeros(j0, max);
    match idx {
        WaveletIndex::Father { k, .. } => tree.father[k] = 1.0,
        WaveletIndex::Mother { level, k } => tree.mother_mut(level).unwrap()[k] = 1.0,
    }
    synthesize(&tree, basis, resolution)
}

/// `B^s_{2,∞}` norm: `sqrt(Σ_k father² + sup_j 2^{2js} Σ_k mother_j²)`.
///
/// The supremum runs over the stored levels; finer levels of a grid function
/// analysed at full depth are exactly zero.
pub fn besov_norm(tree: &CoeffTree, s: f64) -> f64 {
    let father: f64 = tree.father.iter().map(|c| c * c).sum();
    let sup = tree
        .mother_levels()
        .map(|(j, c)| (2.0 * j as f64 * s).exp2() * c.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    (father + sup).sqrt()
}

/// Level and block structure for block thresholding at sample size `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockLayout {
    pub n: f64,
    pub tau: f64,
    pub j0: u32,
    /// Smallest `j >= J` with `2^j >= log n`.
    pub j_n: u32,
    /// Block length `N = 2^{J_n}`.
    pub block_size: usize,
    /// Largest `j` with `2^j <= n / (τ² log n)`; may be negative for tiny `n`.
    pub j_tilde: i64,
    /// False when `j_tilde <= J_n`.
    pub valid: bool,
}

impl BlockLayout {
    /// Layout for a sample of size `n` (at least 4).
    pub fn new(n: usize, tau: f64, j0: u32) -> Result<Self> {
        if n < 4 {
            return Err(Error::param("n", format!("sample size {n} is below 4")));
        }
        Self::for_real_n(n as f64, tau, j0)
    }

    /// As [`BlockLayout::new`] but for a real-valued `n > 1`.
    pub fn for_real_n(n: f64, tau: f64, j0: u32) -> Result<Self> {
        if !(n > 1.0) {
            return Err(Error::param("n", format!("{n} must exceed 1")));
        }
        if !(tau >= 1.0) {
            return Err(Error::param("tau", format!("{tau} must be at least 1")));
        }
        let log_n = n.ln();
        let mut j_n = j0;
        while (j_n as f64).exp2() < log_n {
            j_n += 1;
        }
        let bound = n / (log_n * tau * tau);
        let mut j_tilde = bound.log2().floor() as i64;
        // guard against rounding at exact powers of two
        while (j_tilde as f64 + 1.0).exp2() <= bound {
            j_tilde += 1;
        }
        while (j_tilde as f64).exp2() > bound {
            j_tilde -= 1;
        }
        Ok(BlockLayout {
            n,
            tau,
            j0,
            j_n,
            block_size: 1usize << j_n,
            j_tilde,
            valid: j_tilde > j_n as i64,
        })
    }

    /// Thresholded levels `J_n..=j_tilde` (empty when invalid).
    pub fn levels(&self) -> Range<u32> {
        let end = if self.j_tilde >= self.j_n as i64 {
            self.j_tilde as u32 + 1
        } else {
            self.j_n
        };
        self.j_n..end
    }

    pub fn blocks_per_level(&self, level: u32) -> usize {
        (1usize << level) / self.block_size
    }

    /// Index range of block `ell` at `level`: `{ell N, ..., (ell+1) N - 1}`.
    pub fn block(&self, level: u32, ell: usize) -> Range<usize> {
        debug_assert!(level >= self.j_n);
        ell * self.block_size..(ell + 1) * self.block_size
    }

    pub fn blocks(&self, level: u32) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.blocks_per_level(level)).map(move |ell| self.block(level, ell))
    }

    /// Finest mother level an estimator on this layout carries: `j_tilde`
    /// when valid, otherwise `J_n - 1` (`None` if that is below `J`).
    pub fn finest_level(&self) -> Option<u32> {
        if self.valid {
            Some(self.j_tilde as u32)
        } else {
            self.j_n.checked_sub(1).filter(|&l| l >= self.j0)
        }
    }
}

/// Euclidean norms of the mother coefficients in each block, per thresholded level.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockNorms {
    /// `(level, norms)` for each level in `J_n..=j_tilde`.
    pub levels: Vec<(u32, Vec<f64>)>,
}

impl BlockNorms {
    pub fn get(&self, level: u32) -> Option<&[f64]> {
        self.levels.iter().find(|(j, _)| *j == level).map(|(_, v)| v.as_slice())
    }
}

pub fn block_norms(tree: &CoeffTree, layout: &BlockLayout) -> BlockNorms {
    let levels = layout
        .levels()
        .map(|level| {
            let norms = match tree.mother(level) {
                Some(c) => layout
                    .blocks(level)
                    .map(|r| c[r].iter().map(|v| v * v).sum::<f64>().sqrt())
                    .collect(),
                None => vec![0.0; layout.blocks_per_level(level)],
            };
            (level, norms)
        })
        .collect();
    BlockNorms { levels }
}
