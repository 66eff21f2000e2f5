//! Numerical checks of the Dirichlet-energy inequalities behind the model,
//! and the relative energy gap diagnostic.
//!
//! Every verifier draws its instances from `derive_seed(seed, trial)`, so a
//! report can be regenerated from its bound id, seed and trial index alone.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{knn_impute, mean_impute};
use crate::error::{Error, Result};
use crate::glpn::{maclaurin_polynomial, pool_assignment};
use crate::graph::{energy_gap_lower_bound, GraphKind};
use crate::linalg::{sym_eigen, DEFAULT_EIGEN_TOL};
use crate::missing::{mcar_mask, MaskSpec, Mechanism};
use crate::rng::{derive_seed, standard_normal, stream, StreamRng};
use crate::{DenseMatrix, Graph, SpectralCache};

/// Relative tolerance on the slack of a bound.
pub const SLACK_TOL: f64 = 1e-8;

/// Default coupling strengths for the pyramid bounds.
pub const ALPHA_GRID: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundId {
    #[serde(rename = "eq2")]
    EnergyGap,
    #[serde(rename = "prop32")]
    DraftEnergyReduction,
    #[serde(rename = "eq10")]
    GcnEnergy,
    #[serde(rename = "prop51")]
    GlpnEnergy,
    #[serde(rename = "appendixD")]
    HigherOrder,
}

impl BoundId {
    pub const ALL: [BoundId; 5] = [
        BoundId::EnergyGap,
        BoundId::DraftEnergyReduction,
        BoundId::GcnEnergy,
        BoundId::GlpnEnergy,
        BoundId::HigherOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundId::EnergyGap => "eq2",
            BoundId::DraftEnergyReduction => "prop32",
            BoundId::GcnEnergy => "eq10",
            BoundId::GlpnEnergy => "prop51",
            BoundId::HigherOrder => "appendixD",
        }
    }
}

impl fmt::Display for BoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::param(format!("unknown bound {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub trial: usize,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_min: Option<f64>,
    /// First-order `C_min` next to the second-order one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_min_first_order: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_one: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<f64>,
}

/// Monte-Carlo summary behind a statistical claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub imputer: DraftImputer,
    pub samples: usize,
    pub mean_imputed: f64,
    pub mean_true: f64,
    pub se_imputed: f64,
    pub se_true: f64,
    /// `(mean_true − mean_imputed) / √(se_imputed² + se_true²)`.
    pub margin_se: f64,
}

/// One checked inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound: BoundId,
    pub instance: Instance,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub spectrum: Spectrum,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarlo>,
    pub pass: bool,
}

impl BoundReport {
    fn new(bound: BoundId, instance: Instance, lhs: f64, rhs: f64, spectrum: Spectrum) -> Self {
        let slack = rhs - lhs;
        Self {
            bound,
            instance,
            lhs,
            rhs,
            slack,
            spectrum,
            monte_carlo: None,
            pass: slack >= -SLACK_TOL * rhs.abs().max(1.0),
        }
    }
}

/// One JSON object per line, in the given order.
pub fn to_jsonl(reports: &[BoundReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("reports serialize"));
        out.push('\n');
    }
    out
}

/// `(E(X̂) − E(X)) / E(X)`. Fails when `X` lies (numerically) in the
/// Laplacian kernel.
pub fn relative_energy_gap(x_hat: &DenseMatrix, x: &DenseMatrix, cache: &SpectralCache) -> Result<f64> {
    let base = cache.energy(x)?;
    let norm2 = x.frobenius_norm().powi(2);
    if !(base > 1e-12 * norm2) {
        return Err(Error::contract("relative energy gap needs positive ground-truth energy"));
    }
    Ok((cache.energy(x_hat)? - base) / base)
}

/// Random instance shared by the deterministic verifiers.
struct RandomCase {
    rng: StreamRng,
    instance: Instance,
    adjacency: DenseMatrix,
    x: DenseMatrix,
}

fn random_case(seed: u64, trial: usize) -> Result<RandomCase> {
    let case_seed = derive_seed(seed, trial as u64);
    let mut rng = stream(case_seed);
    let n = rng.random_range(2..=30);
    let d = rng.random_range(1..=5);
    let p = rng.random_range(0.1..=0.6);
    let adjacency = GraphKind::ErdosRenyi { p }.build(n, &mut rng)?;
    let x = standard_normal(n, d, &mut rng);
    Ok(RandomCase {
        rng,
        instance: Instance {
            trial,
            n,
            d,
            seed: case_seed,
            alpha: None,
            order: None,
            ratio: None,
        },
        adjacency,
        x,
    })
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::param("need at least one trial"));
    }
    Ok(())
}

/// Checks `‖X̂ − X‖_F ≥ |E(X̂) − E(X)| / (2Bλ_max)` for one pair.
pub fn energy_gap_report(x_hat: &DenseMatrix, x: &DenseMatrix, cache: &SpectralCache, instance: Instance) -> Result<BoundReport> {
    let lhs = energy_gap_lower_bound(x_hat, x, cache)?;
    let rhs = x_hat.sub(x)?.frobenius_norm();
    let spectrum = Spectrum {
        lambda_max: Some(cache.lambda_max),
        ..Spectrum::default()
    };
    Ok(BoundReport::new(BoundId::EnergyGap, instance, lhs, rhs, spectrum))
}

pub fn verify_energy_gap_bound(trials: usize, seed: u64) -> Result<Vec<BoundReport>> {
    check_trials(trials)?;
    (0..trials)
        .map(|t| {
            let mut c = random_case(seed, t)?;
            // Perturbations from tiny to larger than the signal.
            let scale = 10f64.powf(c.rng.random_range(-3.0..=1.0));
            let noise: DenseMatrix = standard_normal(c.instance.n, c.instance.d, &mut c.rng);
            let x_hat = c.x.add(&noise.scale(scale))?;
            let cache = SpectralCache::new(&c.adjacency)?;
            energy_gap_report(&x_hat, &c.x, &cache, c.instance)
        })
        .collect()
}

/// Checks `(1 − λ₁)² E(X) ≤ E((I − Δ̃) X)` for one signal.
pub fn gcn_energy_report(x: &DenseMatrix, cache: &SpectralCache, instance: Instance) -> Result<BoundReport> {
    let n = x.rows();
    let p = DenseMatrix::identity(n).sub(&cache.laplacian)?;
    let rhs = cache.energy(&p.matmul(x)?)?;
    // Without a nonzero eigenvalue, Δ̃ = 0 and both sides vanish.
    let factor = cache.lambda_one.map_or(0.0, |l| (1.0 - l) * (1.0 - l));
    let lhs = factor * cache.energy(x)?;
    let spectrum = Spectrum {
        lambda_one: cache.lambda_one,
        lambda_max: Some(cache.lambda_max),
        ..Spectrum::default()
    };
    Ok(BoundReport::new(BoundId::GcnEnergy, instance, lhs, rhs, spectrum))
}

pub fn verify_gcn_energy_bound(trials: usize, seed: u64) -> Result<Vec<BoundReport>> {
    check_trials(trials)?;
    (0..trials)
        .map(|t| {
            let c = random_case(seed, t)?;
            let cache = SpectralCache::new(&c.adjacency)?;
            gcn_energy_report(&c.x, &cache, c.instance)
        })
        .collect()
}

/// Pyramid-bound check for a given assignment `S`:
/// `(1 + C_min)² E(X_d) ≤ E(P X_d + α S Sᵀ X_d)` with `P` the Maclaurin
/// polynomial of the given order and `C_min` the smallest eigenvalue of
/// `P − I + α S Sᵀ`.
pub fn pyramid_energy_report(
    xd: &DenseMatrix,
    s: &DenseMatrix,
    alpha: f64,
    order: usize,
    cache: &SpectralCache,
    instance: Instance,
) -> Result<BoundReport> {
    let n = xd.rows();
    let eye = DenseMatrix::identity(n);
    let poly = maclaurin_polynomial(&cache.laplacian, order)?;
    let sst = s.matmul_t(s)?.scale(alpha);
    let q = poly.add(&sst)?;
    let shift = q.sub(&eye)?.symmetrized()?;
    let c_min = sym_eigen(&shift, DEFAULT_EIGEN_TOL)?.min();
    let rhs = cache.energy(&q.matmul(xd)?)?;
    let lhs = (1.0 + c_min) * (1.0 + c_min) * cache.energy(xd)?;

    let mut spectrum = Spectrum {
        c_min: Some(c_min),
        lambda_max: Some(cache.lambda_max),
        ..Spectrum::default()
    };
    let bound = if order == 1 {
        BoundId::GlpnEnergy
    } else {
        let first = cache.laplacian.add(&sst)?.symmetrized()?;
        spectrum.c_min_first_order = Some(sym_eigen(&first, DEFAULT_EIGEN_TOL)?.min());
        BoundId::HigherOrder
    };
    Ok(BoundReport::new(bound, instance, lhs, rhs, spectrum))
}

fn verify_pyramid(trials: usize, alphas: &[f64], order: usize, seed: u64) -> Result<Vec<BoundReport>> {
    check_trials(trials)?;
    if alphas.is_empty() || alphas.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::param("alpha grid must be non-empty and non-negative"));
    }
    let mut out = Vec::with_capacity(trials * alphas.len());
    for t in 0..trials {
        let mut c = random_case(seed, t)?;
        let n = c.instance.n;
        let hidden = c.rng.random_range(1..=8);
        let r = c.rng.random_range(1..n);
        let w1: DenseMatrix = standard_normal(c.instance.d, hidden, &mut c.rng);
        let w2: DenseMatrix = standard_normal(hidden, r, &mut c.rng);
        let s = pool_assignment(&c.x, &w1, &w2)?;
        let cache = SpectralCache::new(&c.adjacency)?;
        for &alpha in alphas {
            let instance = Instance {
                alpha: Some(alpha),
                order: Some(order),
                ..c.instance.clone()
            };
            out.push(pyramid_energy_report(&c.x, &s, alpha, order, &cache, instance)?);
        }
    }
    Ok(out)
}

/// One-level linearized pyramid bound, first-order residual.
pub fn verify_glpn_energy_bound(trials: usize, alphas: &[f64], seed: u64) -> Result<Vec<BoundReport>> {
    verify_pyramid(trials, alphas, 1, seed)
}

/// Same bound with the second-order residual `I + Δ̃ + Δ̃²/2`.
pub fn verify_higher_order_bound(trials: usize, alphas: &[f64], seed: u64) -> Result<Vec<BoundReport>> {
    verify_pyramid(trials, alphas, 2, seed)
}

/// Convex-combination imputers admitted by the draft-energy claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DraftImputer {
    Mean,
    Knn { hops: usize },
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte-Carlo check that imputing i.i.d. standard normal features lowers
/// the expected Dirichlet energy on `adjacency`. Each sample draws fresh
/// features and an MCAR mask; a column left without observations gets one
/// random entry revealed so the imputer is defined.
pub fn verify_draft_energy_reduction(
    adjacency: &DenseMatrix,
    d: usize,
    imputer: DraftImputer,
    ratio: f64,
    samples: usize,
    seed: u64,
) -> Result<BoundReport> {
    if samples == 0 || d == 0 {
        return Err(Error::param("need at least one sample and one feature"));
    }
    let n = adjacency.rows();
    let cache = SpectralCache::new(adjacency)?;
    let mut imputed = Vec::with_capacity(samples);
    let mut truth = Vec::with_capacity(samples);
    for k in 0..samples {
        let sample_seed = derive_seed(seed, k as u64);
        let mut rng = stream(sample_seed);
        let x: DenseMatrix = standard_normal(n, d, &mut rng);
        let mut mask: DenseMatrix = mcar_mask(n, d, &MaskSpec::new(Mechanism::Mcar, ratio, derive_seed(sample_seed, 1)))?;
        for j in 0..d {
            if (0..n).all(|i| mask.get(i, j) == 0.0) {
                mask.set(rng.random_range(0..n), j, 1.0);
            }
        }
        let x_hat = match imputer {
            DraftImputer::Mean => mean_impute(&x, &mask)?.x_hat,
            DraftImputer::Knn { hops } => knn_impute(&Graph::new(adjacency.clone(), x.clone(), mask)?, hops)?.x_hat,
        };
        imputed.push(cache.energy(&x_hat)?);
        truth.push(cache.energy(&x)?);
    }
    let (mean_imputed, se_imputed) = mean_and_se(&imputed);
    let (mean_true, se_true) = mean_and_se(&truth);
    let combined = (se_imputed * se_imputed + se_true * se_true).sqrt();
    let margin_se = if combined > 0.0 {
        (mean_true - mean_imputed) / combined
    } else {
        0.0
    };
    let instance = Instance {
        trial: 0,
        n,
        d,
        seed,
        alpha: None,
        order: None,
        ratio: Some(ratio),
    };
    let mut report = BoundReport::new(
        BoundId::DraftEnergyReduction,
        instance,
        mean_imputed,
        mean_true + 3.0 * combined,
        Spectrum::default(),
    );
    report.monte_carlo = Some(MonteCarlo {
        imputer,
        samples,
        mean_imputed,
        mean_true,
        se_imputed,
        se_true,
        margin_se,
    });
    Ok(report)
}
