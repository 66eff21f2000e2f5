//! Graph Laplacian pyramid network: a diffusion-convolution draft, a
//! soft-assignment pooling pyramid, and a Laplacian-sharpening residual
//! branch combined additively.

pub mod io;
pub mod layers;
mod model;
pub mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use layers::{dgcn_layer, gdn_residual, maclaurin_polynomial, pool, pool_assignment, unpool};
pub use model::{impute, train, GlpnModel, GlpnParams, InitRecord, LevelParams, Trained};
pub use train::TrainSettings;

use crate::baselines::{gcn_refine, knn_impute, mean_impute, soft_impute, GcnConfig, SoftImputeConfig};
use crate::error::{Error, Result};
use crate::rng::{uniform, StreamRng};
use crate::{DenseMatrix, Graph};

/// How the first, coarse imputation is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DraftKind {
    Mean,
    Knn,
    Soft,
    Dgcn,
    Gcn,
}

impl DraftKind {
    pub const ALL: [DraftKind; 5] = [DraftKind::Mean, DraftKind::Knn, DraftKind::Soft, DraftKind::Dgcn, DraftKind::Gcn];

    pub fn name(self) -> &'static str {
        match self {
            DraftKind::Mean => "mean",
            DraftKind::Knn => "knn",
            DraftKind::Soft => "soft",
            DraftKind::Dgcn => "dgcn",
            DraftKind::Gcn => "gcn",
        }
    }

    /// Whether the draft is computed without training.
    pub fn is_structural(self) -> bool {
        matches!(self, DraftKind::Mean | DraftKind::Knn | DraftKind::Soft)
    }
}

impl fmt::Display for DraftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DraftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::param(format!("unknown draft kind {s:?}")))
    }
}

/// Knobs of the structural drafts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftOptions {
    pub knn_hops: usize,
    pub soft: SoftImputeConfig,
}

impl Default for DraftOptions {
    fn default() -> Self {
        Self {
            knn_hops: 1,
            soft: SoftImputeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlpnConfig {
    pub levels: usize,
    /// Cluster count per level; empty halves the node count at every level.
    pub clusters: Vec<usize>,
    pub dgcn_steps: usize,
    pub draft_layers: usize,
    pub maclaurin_order: usize,
    pub alpha: f64,
    pub draft: DraftKind,
    pub draft_options: DraftOptions,
    pub hidden: usize,
    pub residual: bool,
    pub pyramid: bool,
    pub final_dgcn: bool,
    pub residual_relu: bool,
    pub train: TrainSettings,
}

impl Default for GlpnConfig {
    fn default() -> Self {
        Self {
            levels: 1,
            clusters: Vec::new(),
            dgcn_steps: 2,
            draft_layers: 2,
            maclaurin_order: 3,
            alpha: 1.0,
            draft: DraftKind::Dgcn,
            draft_options: DraftOptions::default(),
            hidden: 100,
            residual: true,
            pyramid: true,
            final_dgcn: true,
            residual_relu: false,
            train: TrainSettings::default(),
        }
    }
}

impl GlpnConfig {
    /// Cluster counts for a graph with `n` nodes.
    pub fn cluster_sizes(&self, n: usize) -> Result<Vec<usize>> {
        let sizes = if self.clusters.is_empty() {
            let mut prev = n;
            (0..self.levels)
                .map(|_| {
                    prev = (prev / 2).max(1);
                    prev
                })
                .collect()
        } else {
            self.clusters.clone()
        };
        if sizes.len() != self.levels {
            return Err(Error::param(format!(
                "{} cluster counts for {} levels",
                sizes.len(),
                self.levels
            )));
        }
        let mut prev = n;
        for &r in &sizes {
            if r == 0 || r >= prev {
                return Err(Error::param(format!(
                    "cluster counts must shrink strictly and stay positive: {sizes:?} for n = {n}"
                )));
            }
            prev = r;
        }
        Ok(sizes)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.levels == 0 || self.dgcn_steps == 0 || self.maclaurin_order == 0 || self.hidden == 0 {
            return Err(Error::param("levels, diffusion steps, Maclaurin order and hidden width must be positive"));
        }
        if self.draft == DraftKind::Dgcn && self.draft_layers == 0 {
            return Err(Error::param("a diffusion draft needs at least one layer"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param("alpha must be finite and non-negative"));
        }
        if !self.residual && !self.pyramid {
            return Err(Error::param("at least one of the residual and pyramid branches must be on"));
        }
        self.train.validate()?;
        self.cluster_sizes(n).map(|_| ())
    }
}

/// Uniform in `±√(6/(fan_in + fan_out))`.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut StreamRng) -> DenseMatrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(fan_in, fan_out, bound, rng)
}

/// Drafts that need no training. `graph` carries the visible entries.
pub fn structural_draft(kind: DraftKind, options: &DraftOptions, graph: &Graph) -> Result<DenseMatrix> {
    let (x, m) = (graph.features(), graph.mask());
    let r = match kind {
        DraftKind::Mean => mean_impute(x, m)?,
        DraftKind::Knn => knn_impute(graph, options.knn_hops)?,
        DraftKind::Soft => soft_impute(x, m, &options.soft)?,
        DraftKind::Dgcn | DraftKind::Gcn => {
            return Err(Error::param(format!("{kind} drafts are trained, not structural")));
        }
    };
    Ok(r.x_hat)
}

/// Standalone draft of the requested kind, observed entries restored.
pub fn draft_impute(graph: &Graph, config: &GlpnConfig) -> Result<DenseMatrix> {
    match config.draft {
        k if k.is_structural() => structural_draft(k, &config.draft_options, graph),
        DraftKind::Gcn => Ok(gcn_refine(graph, &gcn_draft_config(config))?.x_hat),
        _ => model::dgcn_draft(graph, config),
    }
}

pub(crate) fn gcn_draft_config(config: &GlpnConfig) -> GcnConfig {
    GcnConfig {
        hidden: config.hidden,
        draft: DraftKind::Mean,
        draft_options: config.draft_options.clone(),
        train: config.train.clone(),
    }
}
