//! Graph container, augmented normalized Laplacian, Dirichlet energy and the
//! adjacency constructions used for sensor data.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Matrix, DEFAULT_EIGEN_TOL};
use crate::rng::StreamRng;
use crate::scalar::Scalar;

/// Eigenvalues at or below this are treated as the Laplacian kernel.
pub const KERNEL_EPS: f64 = 1e-8;

/// Undirected graph with node features and an observation mask
/// (`1` = observed). Missing feature entries are stored as `0`.
#[derive(Debug, Clone)]
pub struct Graph<T> {
    adjacency: Matrix<T>,
    features: Matrix<T>,
    mask: Matrix<T>,
    labels: Option<Vec<usize>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new(adjacency: Matrix<T>, features: Matrix<T>, mask: Matrix<T>) -> Result<Self> {
        validate_adjacency(&adjacency)?;
        let n = adjacency.rows();
        if n == 0 || features.cols() == 0 {
            return Err(Error::contract("graph needs n >= 1 and d >= 1"));
        }
        if features.rows() != n {
            return Err(Error::Dimension {
                op: "Graph::new features",
                left: adjacency.shape(),
                right: features.shape(),
            });
        }
        if mask.shape() != features.shape() {
            return Err(Error::Dimension {
                op: "Graph::new mask",
                left: features.shape(),
                right: mask.shape(),
            });
        }
        validate_mask(&mask)?;
        let features = apply_mask(&features, &mask)?;
        Ok(Self {
            adjacency,
            features,
            mask,
            labels: None,
        })
    }

    /// Fully observed graph.
    pub fn complete(adjacency: Matrix<T>, features: Matrix<T>) -> Result<Self> {
        let mask = Matrix::filled(features.rows(), features.cols(), T::one());
        Self::new(adjacency, features, mask)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::contract(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Same structure and ground-truth values, new observation mask.
    pub fn with_mask(&self, mask: Matrix<T>) -> Result<Self> {
        let mut g = Self::new(self.adjacency.clone(), self.features.clone(), mask)?;
        g.labels = self.labels.clone();
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn adjacency(&self) -> &Matrix<T> {
        &self.adjacency
    }

    /// Features with missing entries zeroed.
    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn mask(&self) -> &Matrix<T> {
        &self.mask
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn missing_count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m == T::zero()).count()
    }
}

pub fn validate_adjacency<T: Scalar>(a: &Matrix<T>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::contract(format!("adjacency must be square, got {:?}", a.shape())));
    }
    let n = a.rows();
    for i in 0..n {
        if a.get(i, i) != T::zero() {
            return Err(Error::contract(format!("adjacency has a self-loop at node {i}")));
        }
        for j in 0..n {
            let v = a.get(i, j);
            if v < T::zero() {
                return Err(Error::contract(format!("negative edge weight at ({i}, {j})")));
            }
            if v != a.get(j, i) {
                return Err(Error::contract(format!("adjacency is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

pub fn validate_mask<T: Scalar>(m: &Matrix<T>) -> Result<()> {
    if m.data().iter().all(|&v| v == T::zero() || v == T::one()) {
        Ok(())
    } else {
        Err(Error::contract("mask entries must be 0 or 1"))
    }
}

/// `M ∘ X`.
pub fn apply_mask<T: Scalar>(x: &Matrix<T>, mask: &Matrix<T>) -> Result<Matrix<T>> {
    x.hadamard(mask)
}

/// Weighted degrees (row sums of `A`).
pub fn degrees<T: Scalar>(a: &Matrix<T>) -> Vec<T> {
    a.row_sums()
}

/// `Δ̃ = I − D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃ = D + I`.
pub fn augmented_laplacian<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    validate_adjacency(a)?;
    let n = a.rows();
    let inv_sqrt: Vec<T> = degrees(a)
        .into_iter()
        .map(|d| T::one() / (d + T::one()).sqrt())
        .collect();
    Ok(Matrix::from_fn(n, n, |i, j| {
        let a_tilde = a.get(i, j) + if i == j { T::one() } else { T::zero() };
        let norm = inv_sqrt[i] * a_tilde * inv_sqrt[j];
        if i == j {
            T::one() - norm
        } else {
            -norm
        }
    }))
}

/// Laplacian together with its spectrum, computed once per graph.
#[derive(Debug, Clone)]
pub struct SpectralCache<T> {
    pub laplacian: Matrix<T>,
    pub degrees: Vec<T>,
    /// Ascending.
    pub eigenvalues: Vec<T>,
    pub lambda_max: T,
    /// Nonzero eigenvalue closest to 1; `None` when the graph has no edges.
    pub lambda_one: Option<T>,
}

impl<T: Scalar> SpectralCache<T> {
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        let laplacian = augmented_laplacian(a)?;
        let eigenvalues = sym_eigen(&laplacian, T::lit(DEFAULT_EIGEN_TOL))?.values;
        let lambda_max = eigenvalues.last().copied().unwrap_or_else(T::zero);
        let lambda_one = closest_to_one(&eigenvalues);
        Ok(Self {
            laplacian,
            degrees: degrees(a),
            eigenvalues,
            lambda_max,
            lambda_one,
        })
    }

    pub fn energy(&self, x: &Matrix<T>) -> Result<T> {
        dirichlet_energy(x, &self.laplacian)
    }
}

/// Filters out kernel eigenvalues, then picks argmin |λ − 1| with ties going
/// to the smaller eigenvalue.
pub fn closest_to_one<T: Scalar>(eigenvalues: &[T]) -> Option<T> {
    let eps = T::lit(KERNEL_EPS);
    let mut best: Option<T> = None;
    for &l in eigenvalues.iter().filter(|&&l| l > eps) {
        best = match best {
            None => Some(l),
            Some(b) => {
                let (db, dl) = ((b - T::one()).abs(), (l - T::one()).abs());
                if dl < db || (dl == db && l < b) {
                    Some(l)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Trace form `tr(Xᵀ Δ̃ X)`.
pub fn dirichlet_energy<T: Scalar>(x: &Matrix<T>, laplacian: &Matrix<T>) -> Result<T> {
    let lx = laplacian.matmul(x)?;
    x.dot(&lx)
}

/// Pairwise form `½ Σ_ij A_ij ‖X_i/√(1+D_i) − X_j/√(1+D_j)‖²`, with `D` the
/// weighted degree so that it agrees with the trace form on weighted graphs.
pub fn dirichlet_energy_pairwise<T: Scalar>(x: &Matrix<T>, a: &Matrix<T>) -> Result<T> {
    if a.rows() != x.rows() || !a.is_square() {
        return Err(Error::Dimension {
            op: "dirichlet_energy_pairwise",
            left: a.shape(),
            right: x.shape(),
        });
    }
    let inv_sqrt: Vec<T> = degrees(a)
        .into_iter()
        .map(|d| T::one() / (d + T::one()).sqrt())
        .collect();
    let mut total = T::zero();
    for i in 0..x.rows() {
        for j in 0..x.rows() {
            let w = a.get(i, j);
            if w == T::zero() {
                continue;
            }
            let dist: T = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(&xi, &xj)| {
                    let diff = xi * inv_sqrt[i] - xj * inv_sqrt[j];
                    diff * diff
                })
                .sum();
            total += w * dist;
        }
    }
    Ok(total * T::lit(0.5))
}

/// Right-hand side of `‖X̂ − X‖ ≥ |E(X̂) − E(X)| / (2 B λ_max)` with
/// `B = max(‖X̂‖, ‖X‖)`, all norms Frobenius. Returns 0 when both inputs
/// vanish.
pub fn energy_gap_lower_bound<T: Scalar>(
    x_hat: &Matrix<T>,
    x: &Matrix<T>,
    cache: &SpectralCache<T>,
) -> Result<T> {
    if x_hat.shape() != x.shape() {
        return Err(Error::Dimension {
            op: "energy_gap_lower_bound",
            left: x_hat.shape(),
            right: x.shape(),
        });
    }
    let bound = x_hat.frobenius_norm().max(x.frobenius_norm());
    if bound == T::zero() || cache.lambda_max == T::zero() {
        return Ok(T::zero());
    }
    let gap = (cache.energy(x_hat)? - cache.energy(x)?).abs();
    Ok(gap / (T::lit(2.0) * bound * cache.lambda_max))
}

/// Mean over nodes of the fraction of neighbors sharing the node's label.
pub fn homophily_ratio<T: Scalar>(a: &Matrix<T>, labels: &[usize]) -> Result<T> {
    validate_adjacency(a)?;
    let n = a.rows();
    if labels.len() != n {
        return Err(Error::contract(format!("{} labels for {n} nodes", labels.len())));
    }
    let mut acc = T::zero();
    for i in 0..n {
        let neighbors: Vec<usize> = (0..n).filter(|&j| a.get(i, j) > T::zero()).collect();
        if neighbors.is_empty() {
            return Err(Error::DegenerateNode { node: i });
        }
        let same = neighbors.iter().filter(|&&j| labels[j] == labels[i]).count();
        acc += T::of_usize(same) / T::of_usize(neighbors.len());
    }
    Ok(acc / T::of_usize(n))
}

/// `A_ij = exp(−(dist_ij/σ)²)` where that exceeds `threshold`, else 0.
pub fn gaussian_kernel_adjacency<T: Scalar>(dist: &Matrix<T>, sigma: T, threshold: T) -> Result<Matrix<T>> {
    if !(sigma > T::zero()) {
        return Err(Error::param("kernel width sigma must be positive"));
    }
    if threshold < T::zero() || threshold >= T::one() {
        return Err(Error::param("threshold must lie in [0, 1)"));
    }
    if !dist.is_square() {
        return Err(Error::contract("distance matrix must be square"));
    }
    let n = dist.rows();
    for i in 0..n {
        if dist.get(i, i) != T::zero() {
            return Err(Error::contract(format!("distance diagonal nonzero at {i}")));
        }
        for j in 0..n {
            if dist.get(i, j) < T::zero() || dist.get(i, j) != dist.get(j, i) {
                return Err(Error::contract(format!(
                    "distances must be symmetric and nonnegative at ({i}, {j})"
                )));
            }
        }
    }
    Ok(Matrix::from_fn(n, n, |i, j| {
        if i == j {
            return T::zero();
        }
        let r = dist.get(i, j) / sigma;
        let w = (-(r * r)).exp();
        if w > threshold {
            w
        } else {
            T::zero()
        }
    }))
}

/// Symmetric 0/1 adjacency from an undirected edge list; duplicates and
/// reversed pairs are coalesced, self-loops rejected.
pub fn binary_adjacency<T: Scalar>(n: usize, edges: &[(usize, usize)]) -> Result<Matrix<T>> {
    let weighted: Vec<(usize, usize, T)> = edges.iter().map(|&(u, v)| (u, v, T::one())).collect();
    weighted_adjacency(n, &weighted)
}

/// Symmetric weighted adjacency; repeated pairs keep the largest weight.
pub fn weighted_adjacency<T: Scalar>(n: usize, edges: &[(usize, usize, T)]) -> Result<Matrix<T>> {
    let mut a = Matrix::zeros(n, n);
    for &(u, v, w) in edges {
        for node in [u, v] {
            if node >= n {
                return Err(Error::NodeOutOfRange { node, n });
            }
        }
        if u == v {
            return Err(Error::contract(format!("self-loop on node {u}")));
        }
        if !(w >= T::zero()) || !w.is_finite() {
            return Err(Error::contract(format!("invalid weight on edge ({u}, {v})")));
        }
        let cur = a.get(u, v);
        let w = if cur > w { cur } else { w };
        a.set(u, v, w);
        a.set(v, u, w);
    }
    Ok(a)
}

/// Hop distance from `source` to every node (`None` when unreachable).
pub fn hop_distances<T: Scalar>(a: &Matrix<T>, source: usize) -> Vec<Option<usize>> {
    let n = a.rows();
    let mut dist = vec![None; n];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued nodes are reached");
        for v in 0..n {
            if a.get(u, v) > T::zero() && dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

pub fn is_connected<T: Scalar>(a: &Matrix<T>) -> bool {
    a.rows() == 0 || hop_distances(a, 0).iter().all(Option::is_some)
}

/// Structural recipes for synthetic graphs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    /// Each pair linked independently with probability `p`.
    ErdosRenyi { p: f64 },
    /// Ring where every node links to its `k` nearest neighbors on each side.
    RingLattice { k: usize },
    /// Row-major 4-neighbor grid of width `ceil(sqrt(n))`.
    Grid,
}

impl GraphKind {
    pub fn build<T: Scalar>(&self, n: usize, rng: &mut StreamRng) -> Result<Matrix<T>> {
        match *self {
            GraphKind::ErdosRenyi { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::param("edge probability must lie in [0, 1]"));
                }
                let mut a = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in i + 1..n {
                        if rng.random::<f64>() < p {
                            a.set(i, j, T::one());
                            a.set(j, i, T::one());
                        }
                    }
                }
                Ok(a)
            }
            GraphKind::RingLattice { k } => {
                if k == 0 || 2 * k >= n {
                    return Err(Error::param("ring lattice needs 1 <= k < n/2"));
                }
                let mut edges = Vec::with_capacity(n * k);
                for i in 0..n {
                    for off in 1..=k {
                        edges.push((i, (i + off) % n));
                    }
                }
                binary_adjacency(n, &edges)
            }
            GraphKind::Grid => {
                let width = (n as f64).sqrt().ceil().max(1.0) as usize;
                let mut edges = Vec::new();
                for i in 0..n {
                    if (i + 1) % width != 0 && i + 1 < n {
                        edges.push((i, i + 1));
                    }
                    if i + width < n {
                        edges.push((i, i + width));
                    }
                }
                binary_adjacency(n, &edges)
            }
        }
    }
}
