//! Seeded synthetic streams for tests, benches and the CLI.
//!
//! Every generator emits rows of Euclidean norm at most 1.

use crate::linalg::{top_k_right_subspace, Matrix};
use crate::rng::Rng;

fn normalize(mut v: Vec<f64>, target: f64) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        let s = target / n;
        v.iter_mut().for_each(|x| *x *= s);
    }
    v
}

/// Uniformly random directions of norm exactly 1.
pub fn unit_row(rng: &mut Rng, d: usize) -> Vec<f64> {
    normalize(rng.gaussian_vec(d, 1.0), 1.0)
}

/// Random directions with norm uniform in `(0, 1]`.
pub fn random_norm_row(rng: &mut Rng, d: usize) -> Vec<f64> {
    let norm = 1.0 - rng.uniform();
    normalize(rng.gaussian_vec(d, 1.0), norm)
}

/// Random orthonormal `d×k` basis.
pub fn random_basis(rng: &mut Rng, d: usize, k: usize) -> Matrix {
    let g = Matrix::from_row_major(d, d, &rng.gaussian_vec(d * d, 1.0)).expect("finite");
    top_k_right_subspace(&g, k).expect("k ≤ d")
}

/// Rows confined to a fixed `k`-dimensional subspace.
#[derive(Debug, Clone)]
pub struct PlantedRank {
    basis: Matrix,
    /// Per-direction scale; a decaying profile gives a well-separated spectrum.
    scales: Vec<f64>,
}

impl PlantedRank {
    pub fn new(rng: &mut Rng, d: usize, k: usize) -> Self {
        let basis = random_basis(rng, d, k);
        let scales = (0..k).map(|i| 1.0 / (1.0 + i as f64)).collect();
        PlantedRank { basis, scales }
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    /// A row `V c` with `‖V c‖ = ‖c‖` uniform in `[0.5, 1]`.
    pub fn row(&self, rng: &mut Rng) -> Vec<f64> {
        let k = self.scales.len();
        let c: Vec<f64> = (0..k).map(|i| self.scales[i] * rng.gaussian()).collect();
        let c = normalize(c, 0.5 + 0.5 * rng.uniform());
        (0..self.basis.rows())
            .map(|r| (0..k).map(|j| self.basis.get(r, j) * c[j]).sum())
            .collect()
    }
}

/// Joint rows `(a | a·X*)` scaled into the unit ball.
#[derive(Debug, Clone)]
pub struct PlantedRegression {
    x_star: Matrix,
}

impl PlantedRegression {
    pub fn new(rng: &mut Rng, d: usize, p: usize) -> Self {
        let x = rng.gaussian_vec(d * p, 1.0 / (d as f64).sqrt());
        PlantedRegression {
            x_star: Matrix::from_row_major(d, p, &x).expect("finite"),
        }
    }

    pub fn x_star(&self) -> &Matrix {
        &self.x_star
    }

    /// With `noise > 0`, the response gets i.i.d. N(0, noise²) perturbations
    /// before scaling.
    pub fn row(&self, rng: &mut Rng, noise: f64) -> Vec<f64> {
        let (d, p) = (self.x_star.rows(), self.x_star.cols());
        let a = rng.gaussian_vec(d, 1.0);
        let mut row = a.clone();
        for j in 0..p {
            let b: f64 = (0..d).map(|i| a[i] * self.x_star.get(i, j)).sum();
            row.push(b + noise * rng.gaussian());
        }
        // Scaling the joint row keeps b = a·X* exact.
        normalize(row, 0.5 + 0.5 * rng.uniform())
    }
}

/// Weighted edge `(u, v, w)` with `w ∈ (0, 1]`, encoded as the row
/// `√(w/2)·(e_u − e_v)`, whose norm is `√w ≤ 1`.
pub fn edge_row(n: usize, u: usize, v: usize, w: f64) -> Vec<f64> {
    let mut row = vec![0.0; n];
    let c = (w / 2.0).sqrt();
    row[u] += c;
    row[v] -= c;
    row
}

pub fn random_edge(rng: &mut Rng, n: usize) -> (usize, usize, f64) {
    let u = rng.below(n as u64) as usize;
    let mut v = rng.below(n as u64 - 1) as usize;
    if v >= u {
        v += 1;
    }
    (u, v, 1.0 - rng.uniform())
}
