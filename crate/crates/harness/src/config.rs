//! Experiment configuration and its flat `key = value` text format.

use std::path::PathBuf;
use std::str::FromStr;

use glpn_core::glpn::GlpnConfig;
use glpn_core::graph::GraphKind;
use glpn_core::missing::Mechanism;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AdjacencySource, IngestSpec};
use crate::methods::Method;
use crate::synthetic::SyntheticSpec;

/// Learning rate used by experiments unless configured otherwise.
pub const EXPERIMENT_LR: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Files(IngestSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub mechanisms: Vec<Mechanism>,
    pub ratios: Vec<f64>,
    pub methods: Vec<Method>,
    pub model: GlpnConfig,
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut model = GlpnConfig::default();
        model.train.adam.lr = EXPERIMENT_LR;
        Self {
            dataset: DatasetSource::Synthetic(SyntheticSpec::default()),
            mechanisms: Mechanism::ALL.to_vec(),
            ratios: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            methods: vec![Method::Mean, Method::Gcn, Method::Glpn(glpn_core::glpn::DraftKind::Dgcn)],
            model,
            trials: 5,
            seed: 0,
            workers: 0,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.trials == 0 {
            return Err("trials must be at least 1".into());
        }
        if self.ratios.is_empty() || self.mechanisms.is_empty() || self.methods.is_empty() {
            return Err("ratios, mechanisms and methods must be non-empty".into());
        }
        if let Some(r) = self.ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(format!("missing ratio {r} outside [0, 1]"));
        }
        self.model.train.validate().map_err(|e| e.to_string())
    }

    /// Parses the text format on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut files = FileKeys::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError { line, message };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, found {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_owned()) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            cfg.apply(key, value, &mut files).map_err(err)?;
        }
        files.finish(&mut cfg).map_err(|message| ConfigError { line: 0, message })?;
        cfg.validate().map_err(|message| ConfigError { line: 0, message })?;
        Ok(cfg)
    }

    fn synthetic(&mut self) -> Result<&mut SyntheticSpec, String> {
        match &mut self.dataset {
            DatasetSource::Synthetic(s) => Ok(s),
            DatasetSource::Files(_) => Err("synthetic keys need dataset = synthetic".into()),
        }
    }

    fn apply(&mut self, key: &str, value: &str, files: &mut FileKeys) -> Result<(), String> {
        let m = &mut self.model;
        match key {
            "dataset" => match value {
                "synthetic" => self.dataset = DatasetSource::Synthetic(SyntheticSpec::default()),
                "files" => files.enabled = true,
                _ => return Err(format!("dataset must be synthetic or files, found {value:?}")),
            },
            "synthetic.n" => self.synthetic()?.n = num(value)?,
            "synthetic.d" => self.synthetic()?.d = num(value)?,
            "synthetic.smoothness" => self.synthetic()?.smoothness = num(value)?,
            "synthetic.graph" => self.synthetic()?.kind = parse_graph_kind(value)?,
            "features" => files.features = Some(value.into()),
            "features.header" => files.header = flag(value)?,
            "edges" => files.edges = Some(value.into()),
            "distances" => files.distances = Some(value.into()),
            "sigma" => files.sigma = Some(num(value)?),
            "threshold" => files.threshold = Some(num(value)?),
            "mask" => files.mask = Some(value.into()),
            "mechanisms" => self.mechanisms = list(value)?,
            "ratios" => self.ratios = list(value)?,
            "methods" => self.methods = list(value)?,
            "trials" => self.trials = num(value)?,
            "seed" => self.seed = num(value)?,
            "workers" => self.workers = num(value)?,
            "out" => self.out = Some(value.into()),
            "model.levels" => m.levels = num(value)?,
            "model.clusters" => m.clusters = list(value)?,
            "model.dgcn_steps" => m.dgcn_steps = num(value)?,
            "model.draft_layers" => m.draft_layers = num(value)?,
            "model.maclaurin_order" => m.maclaurin_order = num(value)?,
            "model.alpha" => m.alpha = num(value)?,
            "model.draft" => m.draft = num(value)?,
            "model.hidden" => m.hidden = num(value)?,
            "model.residual" => m.residual = flag(value)?,
            "model.pyramid" => m.pyramid = flag(value)?,
            "model.final_dgcn" => m.final_dgcn = flag(value)?,
            "model.residual_relu" => m.residual_relu = flag(value)?,
            "model.knn_hops" => m.draft_options.knn_hops = num(value)?,
            "model.soft_lambda" => m.draft_options.soft.lambda = num(value)?,
            "model.soft_max_iter" => m.draft_options.soft.max_iter = num(value)?,
            "model.soft_tol" => m.draft_options.soft.tol = num(value)?,
            "train.epochs" => m.train.epochs = num(value)?,
            "train.lr" => m.train.adam.lr = num(value)?,
            "train.beta1" => m.train.adam.beta1 = num(value)?,
            "train.beta2" => m.train.adam.beta2 = num(value)?,
            "train.eps" => m.train.adam.eps = num(value)?,
            "train.views" => m.train.views = num(value)?,
            "train.hide_fraction" => m.train.hide_fraction = num(value)?,
            "train.validation_fraction" => m.train.validation_fraction = num(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }
}

#[derive(Default)]
struct FileKeys {
    enabled: bool,
    features: Option<PathBuf>,
    header: bool,
    edges: Option<PathBuf>,
    distances: Option<PathBuf>,
    sigma: Option<f64>,
    threshold: Option<f64>,
    mask: Option<PathBuf>,
}

impl FileKeys {
    fn finish(self, cfg: &mut ExperimentConfig) -> Result<(), String> {
        let any = self.features.is_some() || self.edges.is_some() || self.distances.is_some() || self.mask.is_some();
        if !self.enabled {
            return if any {
                Err("file keys need dataset = files".into())
            } else {
                Ok(())
            };
        }
        let features = self.features.ok_or("dataset = files needs features")?;
        let adjacency = match (self.edges, self.distances) {
            (Some(e), None) => AdjacencySource::Edges(e),
            (None, Some(path)) => AdjacencySource::Distances {
                path,
                sigma: self.sigma.ok_or("distances need sigma")?,
                threshold: self.threshold.unwrap_or(0.0),
            },
            _ => return Err("give exactly one of edges and distances".into()),
        };
        cfg.dataset = DatasetSource::Files(IngestSpec {
            features,
            header: self.header,
            adjacency,
            mask: self.mask,
        });
        Ok(())
    }
}

fn num<T: FromStr>(value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse {value:?}"))
}

fn flag(value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("expected a boolean, found {value:?}")),
    }
}

fn list<T: FromStr>(value: &str) -> Result<Vec<T>, String> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| num(v.trim())).collect()
}

/// `grid`, `erdos-renyi:<p>` or `ring:<k>`.
pub fn parse_graph_kind(value: &str) -> Result<GraphKind, String> {
    let (name, arg) = value.split_once(':').map_or((value, None), |(a, b)| (a, Some(b)));
    match (name, arg) {
        ("grid", None) => Ok(GraphKind::Grid),
        ("erdos-renyi", Some(p)) => Ok(GraphKind::ErdosRenyi { p: num(p)? }),
        ("ring", Some(k)) => Ok(GraphKind::RingLattice { k: num(k)? }),
        _ => Err(format!("unknown graph kind {value:?}; use grid, erdos-renyi:<p> or ring:<k>")),
    }
}
