//! Imputation methods addressable by name.

use std::fmt;
use std::str::FromStr;

use glpn_core::baselines::{gcn_refine, knn_impute, mean_impute, soft_impute, GcnConfig};
use glpn_core::glpn::{self, DraftKind, GlpnConfig};
use glpn_core::{DenseMatrix, Error, Graph, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Mean,
    Knn,
    Soft,
    Gcn,
    /// Full model on top of the given draft.
    Glpn(DraftKind),
    GlpnWithoutResidual,
    GlpnWithoutPyramid,
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Mean => "mean".into(),
            Method::Knn => "knn".into(),
            Method::Soft => "soft".into(),
            Method::Gcn => "gcn".into(),
            Method::Glpn(DraftKind::Dgcn) => "glpn".into(),
            Method::Glpn(k) => format!("{k}+glpn"),
            Method::GlpnWithoutResidual => "glpn-wo-r".into(),
            Method::GlpnWithoutPyramid => "glpn-wo-p".into(),
        }
    }

    /// Whether the method trains a model.
    pub fn is_learned(&self) -> bool {
        !matches!(self, Method::Mean | Method::Knn | Method::Soft)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Ok(match lower.as_str() {
            "mean" => Method::Mean,
            "knn" => Method::Knn,
            "soft" => Method::Soft,
            "gcn" => Method::Gcn,
            "glpn" => Method::Glpn(DraftKind::Dgcn),
            "glpn-wo-r" => Method::GlpnWithoutResidual,
            "glpn-wo-p" => Method::GlpnWithoutPyramid,
            other => match other.strip_suffix("+glpn") {
                Some(draft) => Method::Glpn(draft.parse()?),
                None => return Err(Error::InvalidParameter(format!("unknown method {s:?}"))),
            },
        })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Output of one method on one masked graph.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub x_hat: DenseMatrix,
    /// Draft fed to the refinement stage, when there is one.
    pub draft: Option<DenseMatrix>,
    pub final_loss: Option<f64>,
    pub validation_rmse: Option<f64>,
}

impl MethodOutput {
    fn plain(x_hat: DenseMatrix) -> Self {
        Self {
            x_hat,
            draft: None,
            final_loss: None,
            validation_rmse: None,
        }
    }
}

/// Runs `method` on the visible entries of `graph`. `model` supplies the
/// shared hyperparameters, including the training seed.
pub fn run_method(method: Method, graph: &Graph, model: &GlpnConfig) -> Result<MethodOutput> {
    let (x, m) = (graph.features(), graph.mask());
    match method {
        Method::Mean => Ok(MethodOutput::plain(mean_impute(x, m)?.x_hat)),
        Method::Knn => Ok(MethodOutput::plain(knn_impute(graph, model.draft_options.knn_hops)?.x_hat)),
        Method::Soft => Ok(MethodOutput::plain(soft_impute(x, m, &model.draft_options.soft)?.x_hat)),
        Method::Gcn => {
            let config = GcnConfig {
                hidden: model.hidden,
                draft: DraftKind::Mean,
                draft_options: model.draft_options.clone(),
                train: model.train.clone(),
            };
            Ok(MethodOutput::plain(gcn_refine(graph, &config)?.x_hat))
        }
        Method::Glpn(draft) => run_glpn(graph, &GlpnConfig { draft, ..model.clone() }),
        Method::GlpnWithoutResidual => run_glpn(graph, &GlpnConfig { residual: false, ..model.clone() }),
        Method::GlpnWithoutPyramid => run_glpn(graph, &GlpnConfig { pyramid: false, ..model.clone() }),
    }
}

fn run_glpn(graph: &Graph, config: &GlpnConfig) -> Result<MethodOutput> {
    let (model, trained) = glpn::train(graph, config)?;
    let x_hat = model.predict(&trained.params, graph)?;
    let draft = model.draft(&trained.params, &model.prepare(graph)?)?;
    Ok(MethodOutput {
        x_hat,
        draft: Some(draft),
        final_loss: trained.loss_curve.last().copied(),
        validation_rmse: trained.validation_rmse,
    })
}
