//! Reference imputers: column mean, graph k-hop mean, soft-impute, and a
//! two-layer GCN refinement of a structural draft.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::glpn::train::{fit, TrainSettings};
use crate::glpn::{glorot, structural_draft, DraftKind, DraftOptions};
use crate::graph::{augmented_laplacian, hop_distances, validate_mask};
use crate::linalg::{svd_thin, Matrix};
use crate::rng::stream;
use crate::scalar::Scalar;
use crate::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ImputeResult<T> {
    pub x_hat: Matrix<T>,
    pub method: String,
    pub iterations: usize,
    pub converged: bool,
}

fn check_shapes<T: Scalar>(x: &Matrix<T>, mask: &Matrix<T>, op: &'static str) -> Result<()> {
    if x.shape() != mask.shape() {
        return Err(Error::Dimension {
            op,
            left: x.shape(),
            right: mask.shape(),
        });
    }
    validate_mask(mask)
}

/// Mean of the observed entries in every column.
pub fn observed_column_means<T: Scalar>(x: &Matrix<T>, mask: &Matrix<T>) -> Result<Vec<T>> {
    check_shapes(x, mask, "observed_column_means")?;
    let (n, d) = x.shape();
    let mut sums = vec![T::zero(); d];
    let mut counts = vec![0usize; d];
    for i in 0..n {
        for j in 0..d {
            if mask.get(i, j) != T::zero() {
                sums[j] += x.get(i, j);
                counts[j] += 1;
            }
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(column, (s, c))| {
            if c == 0 {
                Err(Error::FullyMissingColumn { column })
            } else {
                Ok(s / T::of_usize(c))
            }
        })
        .collect()
}

/// Keeps `x` where observed and takes `fill` elsewhere.
pub fn restore_observed<T: Scalar>(x: &Matrix<T>, mask: &Matrix<T>, fill: &Matrix<T>) -> Result<Matrix<T>> {
    check_shapes(x, mask, "restore_observed")?;
    check_shapes(fill, mask, "restore_observed")?;
    Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| {
        if mask.get(i, j) != T::zero() {
            x.get(i, j)
        } else {
            fill.get(i, j)
        }
    }))
}

pub fn mean_impute<T: Scalar>(x: &Matrix<T>, mask: &Matrix<T>) -> Result<ImputeResult<T>> {
    let means = observed_column_means(x, mask)?;
    let fill = Matrix::from_fn(x.rows(), x.cols(), |_, j| means[j]);
    Ok(ImputeResult {
        x_hat: restore_observed(x, mask, &fill)?,
        method: "mean".into(),
        iterations: 1,
        converged: true,
    })
}

/// Averages each missing entry over the observed values of nodes within
/// `k_hops` hops; entries with no such neighbor take the column mean.
pub fn knn_impute<T: Scalar>(graph: &crate::graph::Graph<T>, k_hops: usize) -> Result<ImputeResult<T>> {
    if k_hops == 0 {
        return Err(Error::param("KNN imputation needs at least one hop"));
    }
    let (x, mask, a) = (graph.features(), graph.mask(), graph.adjacency());
    let means = observed_column_means(x, mask)?;
    let (n, d) = x.shape();
    let mut out = x.clone();
    for i in 0..n {
        if mask.row(i).iter().all(|&m| m != T::zero()) {
            continue;
        }
        let reach: Vec<usize> = hop_distances(a, i)
            .iter()
            .enumerate()
            .filter_map(|(u, dist)| match dist {
                Some(h) if *h >= 1 && *h <= k_hops => Some(u),
                _ => None,
            })
            .collect();
        for j in 0..d {
            if mask.get(i, j) != T::zero() {
                continue;
            }
            let (mut sum, mut count) = (T::zero(), 0usize);
            for &u in &reach {
                if mask.get(u, j) != T::zero() {
                    sum += x.get(u, j);
                    count += 1;
                }
            }
            out.set(i, j, if count > 0 { sum / T::of_usize(count) } else { means[j] });
        }
    }
    Ok(ImputeResult {
        x_hat: out,
        method: "knn".into(),
        iterations: 1,
        converged: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftImputeConfig {
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SoftImputeConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

/// `½‖M∘(X−Z)‖² + λ‖Z‖_*`.
pub fn soft_impute_objective<T: Scalar>(x: &Matrix<T>, mask: &Matrix<T>, z: &Matrix<T>, lambda: T) -> Result<T> {
    let fit: T = x
        .data()
        .iter()
        .zip(mask.data())
        .zip(z.data())
        .map(|((&a, &m), &b)| m * (a - b) * (a - b))
        .sum();
    Ok(T::lit(0.5) * fit + lambda * svd_thin(z)?.nuclear_norm())
}

fn svt<T: Scalar>(m: &Matrix<T>, lambda: T) -> Result<Matrix<T>> {
    Ok(svd_thin(m)?.reconstruct_with(|s| (s - lambda).max(T::zero())))
}

pub fn soft_impute<T: Scalar>(x: &Matrix<T>, mask: &Matrix<T>, config: &SoftImputeConfig) -> Result<ImputeResult<T>> {
    soft_impute_traced(x, mask, config, false).map(|(r, _)| r)
}

/// Soft-impute that optionally records the objective after every iterate.
pub fn soft_impute_traced<T: Scalar>(
    x: &Matrix<T>,
    mask: &Matrix<T>,
    config: &SoftImputeConfig,
    trace: bool,
) -> Result<(ImputeResult<T>, Vec<T>)> {
    check_shapes(x, mask, "soft_impute")?;
    if !(config.lambda >= 0.0) || !(config.tol > 0.0) {
        return Err(Error::param("soft-impute needs lambda >= 0 and tol > 0"));
    }
    let lambda = T::lit(config.lambda);
    let observed = crate::graph::apply_mask(x, mask)?;
    let mut z = Matrix::zeros(x.rows(), x.cols());
    let mut objectives = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let filled = restore_observed(&observed, mask, &z)?;
        let next = svt(&filled, lambda)?;
        let step = next.sub(&z)?.frobenius_norm();
        z = next;
        if trace {
            objectives.push(soft_impute_objective(&observed, mask, &z, lambda)?);
        }
        if step < T::lit(config.tol) {
            converged = true;
            break;
        }
    }
    let result = ImputeResult {
        x_hat: restore_observed(&observed, mask, &z)?,
        method: "soft".into(),
        iterations,
        converged,
    };
    Ok((result, objectives))
}

/// Settings for [`gcn_refine`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub hidden: usize,
    pub draft: DraftKind,
    pub draft_options: DraftOptions,
    pub train: TrainSettings,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            draft: DraftKind::Mean,
            draft_options: DraftOptions::default(),
            train: TrainSettings::default(),
        }
    }
}

/// `P = I − Δ̃`, the propagation matrix of a vanilla GCN layer.
pub fn gcn_propagation(a: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(DenseMatrix::identity(a.rows()).sub(&augmented_laplacian(a)?)?)
}

/// Two-layer GCN `P·relu(P X W₁)·W₂`; `px` is the precomputed `P X`.
fn gcn_forward(tape: &mut Tape<f64>, params: &[Var], p: Var, px: Var) -> Result<Var> {
    let h = tape.matmul(px, params[0])?;
    let h = tape.relu(h);
    let hw = tape.matmul(h, params[1])?;
    tape.matmul(p, hw)
}

/// Refines a structural draft with a trained two-layer GCN. Observed entries
/// are restored on output.
pub fn gcn_refine(graph: &crate::Graph, config: &GcnConfig) -> Result<ImputeResult<f64>> {
    if config.hidden == 0 {
        return Err(Error::param("GCN hidden width must be positive"));
    }
    let d = graph.d();
    let p = gcn_propagation(graph.adjacency())?;
    let mut rng = stream(config.train.seed);
    let init = vec![glorot(d, config.hidden, &mut rng), glorot(config.hidden, d, &mut rng)];

    let prepare = |_: &DenseMatrix, m_in: &DenseMatrix| -> Result<DenseMatrix> {
        let draft = structural_draft(config.draft, &config.draft_options, &graph.with_mask(m_in.clone())?)?;
        p.matmul(&draft)
    };
    let forward = |tape: &mut Tape<f64>, params: &[Var], px: &DenseMatrix| -> Result<Var> {
        let pv = tape.constant(p.clone());
        let pxv = tape.constant(px.clone());
        gcn_forward(tape, params, pv, pxv)
    };
    let fitted = fit(graph.features(), graph.mask(), init, &config.train, prepare, forward)?;

    let px = prepare(graph.features(), graph.mask())?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = fitted.params.iter().map(|w| tape.param(w.clone())).collect();
    let pv = tape.constant(p.clone());
    let pxv = tape.constant(px);
    let out = gcn_forward(&mut tape, &vars, pv, pxv)?;
    Ok(ImputeResult {
        x_hat: restore_observed(graph.features(), graph.mask(), tape.value(out))?,
        method: "gcn".into(),
        iterations: config.train.epochs,
        converged: true,
    })
}
