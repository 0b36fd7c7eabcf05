//! Cyclic Jacobi eigen-decomposition of small dense symmetric matrices.

use serde::Serialize;

/// A dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    /// Panics unless `data` is `dim × dim`. Symmetry is not checked.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim, "expected a {dim}x{dim} matrix");
        SymMatrix { dim, data }
    }

    /// `c u uᵀ`.
    pub fn rank_one(u: &[f64], c: f64) -> Self {
        let dim = u.len();
        let data = (0..dim * dim).map(|k| c * u[k / dim] * u[k % dim]).collect();
        SymMatrix { dim, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..i {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// All eigenpairs; `vectors[k]` belongs to `values[k]`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi rotations until the off-diagonal mass is negligible.
pub fn jacobi_eigen(m: &SymMatrix) -> EigenDecomposition {
    let n = m.dim;
    let mut a = m.data.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..i {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    EigenDecomposition {
        values: (0..n).map(|i| a[i * n + i]).collect(),
        vectors: (0..n).map(|j| (0..n).map(|k| v[k * n + j]).collect()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeadingEigenpair {
    pub value: f64,
    pub vector: Vec<f64>,
    /// The matrix was zero; `vector` is the first unit vector.
    pub degenerate: bool,
}

/// Eigenpair whose eigenvalue has the largest magnitude.
///
/// The vector has unit norm and its largest-magnitude entry is positive
/// (the lowest index wins ties).
pub fn leading_eigenvector(m: &SymMatrix) -> LeadingEigenpair {
    let n = m.dim;
    if m.data.iter().all(|&x| x == 0.0) {
        let mut vector = vec![0.0; n];
        if n > 0 {
            vector[0] = 1.0;
        }
        return LeadingEigenpair {
            value: 0.0,
            vector,
            degenerate: true,
        };
    }
    let eig = jacobi_eigen(m);
    let mut best = 0;
    for k in 1..n {
        if eig.values[k].abs() > eig.values[best].abs() {
            best = k;
        }
    }
    let mut vector = eig.vectors[best].clone();
    let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut pivot = 0;
    for k in 1..n {
        if vector[k].abs() > vector[pivot].abs() {
            pivot = k;
        }
    }
    let sign = if vector[pivot] < 0.0 { -1.0 } else { 1.0 };
    vector.iter_mut().for_each(|x| *x *= sign / norm);
    LeadingEigenpair {
        value: eig.values[best],
        vector,
        degenerate: false,
    }
}
