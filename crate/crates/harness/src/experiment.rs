//! Grid execution over (mechanism, ratio, trial, method) and report output.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use glpn_core::graph::{augmented_laplacian, dirichlet_energy};
use glpn_core::missing::{minmax_scale, MaskSpec, Mechanism, ScalingRecord};
use glpn_core::{DenseMatrix, Error, Graph};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DatasetSource, ExperimentConfig};
use crate::ingest::{ingest, IngestError};
use crate::methods::{run_method, Method};
use crate::metrics::evaluate;
use crate::synthetic::gen_synthetic;

pub const SCHEMA: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
}

/// Seed for a named part of the grid: the first eight bytes of
/// `sha256("<seed>|<descriptor>")`, little-endian.
pub fn cell_seed(seed: u64, descriptor: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}|{descriptor}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// Energies are measured on the scaled features; absent when the
    /// ground truth is incomplete.
    pub energy: Option<f64>,
    pub energy_true: Option<f64>,
    pub delta_e: Option<f64>,
    /// Relative energy gap of the draft fed to the refinement stage.
    pub draft_delta_e: Option<f64>,
    pub validation_rmse: Option<f64>,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Ok(CellMetrics),
    Failed { error: String, divergence: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub mechanism: Mechanism,
    pub ratio: f64,
    pub trial: usize,
    pub method: Method,
    pub mask_seed: u64,
    pub train_seed: u64,
    pub outcome: Outcome,
}

impl CellResult {
    pub fn metrics(&self) -> Option<&CellMetrics> {
        match &self.outcome {
            Outcome::Ok(m) => Some(m),
            Outcome::Failed { .. } => None,
        }
    }
}

/// Trial averages for one (mechanism, ratio, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mechanism: Mechanism,
    pub ratio: f64,
    pub method: Method,
    pub ok: usize,
    pub failed: usize,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub delta_e: Option<f64>,
    pub abs_delta_e: Option<f64>,
    pub draft_delta_e: Option<f64>,
    /// Divided by the mean-imputation row of the same mechanism and ratio.
    pub rmse_normalized: Option<f64>,
    pub mae_normalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub metric_units: String,
    pub energy_space: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
    pub summaries: Vec<Summary>,
}

impl ExperimentReport {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.metrics().is_none()).count()
    }

    pub fn any_divergence(&self) -> bool {
        self.cells
            .iter()
            .any(|c| matches!(c.outcome, Outcome::Failed { divergence: true, .. }))
    }

    pub fn cell(&self, mechanism: Mechanism, ratio: f64, trial: usize, method: Method) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.mechanism == mechanism && c.ratio == ratio && c.trial == trial && c.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mechanism: Mechanism,
    pub ratio: f64,
    pub trial: usize,
    pub method: Method,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    /// Wall times, kept apart so the report stays reproducible.
    pub timings: Vec<Timing>,
}

/// Ground truth of one trial.
struct TrialData {
    adjacency: DenseMatrix,
    laplacian: DenseMatrix,
    raw: DenseMatrix,
    /// Entries whose true value is known.
    known: DenseMatrix,
}

fn load_trials(config: &ExperimentConfig) -> Result<Vec<TrialData>, ExperimentError> {
    let build = |graph: &Graph, raw: DenseMatrix| -> Result<TrialData, ExperimentError> {
        Ok(TrialData {
            adjacency: graph.adjacency().clone(),
            laplacian: augmented_laplacian(graph.adjacency())?,
            raw,
            known: graph.mask().clone(),
        })
    };
    match &config.dataset {
        DatasetSource::Synthetic(spec) => (0..config.trials)
            .map(|t| {
                let g = gen_synthetic(spec, cell_seed(config.seed, &format!("data|{t}")))?;
                let raw = g.features().clone();
                build(&g, raw)
            })
            .collect(),
        DatasetSource::Files(spec) => {
            let ds = ingest(spec)?;
            let shared = build(&ds.graph, ds.raw)?;
            Ok((0..config.trials)
                .map(|_| TrialData {
                    adjacency: shared.adjacency.clone(),
                    laplacian: shared.laplacian.clone(),
                    raw: shared.raw.clone(),
                    known: shared.known.clone(),
                })
                .collect())
        }
    }
}

fn run_cell(
    config: &ExperimentConfig,
    data: &TrialData,
    mechanism: Mechanism,
    ratio: f64,
    trial: usize,
    method: Method,
) -> CellResult {
    let key = format!("{mechanism}|{ratio}|{trial}");
    let mask_seed = cell_seed(config.seed, &format!("mask|{key}"));
    let train_seed = cell_seed(config.seed, &format!("train|{key}"));
    let outcome = match evaluate_cell(config, data, mechanism, ratio, method, mask_seed, train_seed) {
        Ok(m) => Outcome::Ok(m),
        Err(e) => Outcome::Failed {
            divergence: matches!(e, Error::TrainingDivergence { .. }),
            error: e.to_string(),
        },
    };
    CellResult {
        mechanism,
        ratio,
        trial,
        method,
        mask_seed,
        train_seed,
        outcome,
    }
}

fn evaluate_cell(
    config: &ExperimentConfig,
    data: &TrialData,
    mechanism: Mechanism,
    ratio: f64,
    method: Method,
    mask_seed: u64,
    train_seed: u64,
) -> glpn_core::Result<CellMetrics> {
    let simulated = MaskSpec::new(mechanism, ratio, mask_seed).generate(&data.raw)?;
    let visible = simulated.hadamard(&data.known)?;
    // Scored entries are known but hidden; everything else counts as observed.
    let scored = DenseMatrix::from_fn(visible.rows(), visible.cols(), |i, j| {
        (data.known.get(i, j) == 0.0 || simulated.get(i, j) == 1.0) as u8 as f64
    });
    let (scaled, record) = minmax_scale(&data.raw, &visible)?;
    let graph = Graph::new(data.adjacency.clone(), scaled, visible)?;
    let mut model = config.model.clone();
    model.train.seed = train_seed;
    let out = run_method(method, &graph, &model)?;
    let errors = evaluate(&out.x_hat, &data.raw, &scored, &record)?;

    let complete = data.known.data().iter().all(|&v| v == 1.0);
    let (energy, energy_true, delta_e, draft_delta_e) = if complete {
        energies(&data.raw, &record, &data.laplacian, &out.x_hat, out.draft.as_ref())?
    } else {
        (None, None, None, None)
    };
    Ok(CellMetrics {
        rmse: errors.rmse,
        mae: errors.mae,
        energy,
        energy_true,
        delta_e,
        draft_delta_e,
        validation_rmse: out.validation_rmse,
        final_loss: out.final_loss,
    })
}

type EnergyFields = (Option<f64>, Option<f64>, Option<f64>, Option<f64>);

fn energies(
    raw: &DenseMatrix,
    record: &ScalingRecord,
    laplacian: &DenseMatrix,
    x_hat: &DenseMatrix,
    draft: Option<&DenseMatrix>,
) -> glpn_core::Result<EnergyFields> {
    let truth = dirichlet_energy(&record.scale(raw)?, laplacian)?;
    let gap = |e: f64| (truth > 0.0).then(|| e / truth - 1.0);
    let energy = dirichlet_energy(x_hat, laplacian)?;
    let draft_gap = match draft {
        Some(d) => gap(dirichlet_energy(d, laplacian)?),
        None => None,
    };
    Ok((Some(energy), Some(truth), gap(energy), draft_gap))
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn summarize(cells: &[CellResult]) -> Vec<Summary> {
    let mut groups: BTreeMap<(Mechanism, u64, Method), Vec<&CellResult>> = BTreeMap::new();
    for c in cells {
        groups.entry((c.mechanism, c.ratio.to_bits(), c.method)).or_default().push(c);
    }
    let mut out: Vec<Summary> = groups
        .into_iter()
        .map(|((mechanism, ratio, method), group)| {
            let ok: Vec<&CellMetrics> = group.iter().filter_map(|c| c.metrics()).collect();
            Summary {
                mechanism,
                ratio: f64::from_bits(ratio),
                method,
                ok: ok.len(),
                failed: group.len() - ok.len(),
                rmse: mean_of(ok.iter().map(|m| m.rmse)),
                mae: mean_of(ok.iter().map(|m| m.mae)),
                delta_e: mean_of(ok.iter().filter_map(|m| m.delta_e)),
                abs_delta_e: mean_of(ok.iter().filter_map(|m| m.delta_e.map(f64::abs))),
                draft_delta_e: mean_of(ok.iter().filter_map(|m| m.draft_delta_e)),
                rmse_normalized: None,
                mae_normalized: None,
            }
        })
        .collect();
    let baselines: BTreeMap<(Mechanism, u64), (Option<f64>, Option<f64>)> = out
        .iter()
        .filter(|s| s.method == Method::Mean)
        .map(|s| ((s.mechanism, s.ratio.to_bits()), (s.rmse, s.mae)))
        .collect();
    for s in &mut out {
        if let Some(&(rmse, mae)) = baselines.get(&(s.mechanism, s.ratio.to_bits())) {
            let div = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(a), Some(b)) if b > 0.0 => Some(a / b),
                (Some(a), Some(_)) if a == 0.0 => Some(1.0),
                _ => None,
            };
            s.rmse_normalized = div(s.rmse, rmse);
            s.mae_normalized = div(s.mae, mae);
        }
    }
    out
}

/// Runs the whole grid. Failing cells are recorded, not propagated.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRun, ExperimentError> {
    config.validate().map_err(ExperimentError::Config)?;
    let trials = load_trials(config)?;
    let mut units = Vec::new();
    for &mechanism in &config.mechanisms {
        for &ratio in &config.ratios {
            for trial in 0..config.trials {
                for &method in &config.methods {
                    units.push((mechanism, ratio, trial, method));
                }
            }
        }
    }
    units.sort_by(|a, b| (a.0, a.1.to_bits(), a.2, a.3).cmp(&(b.0, b.1.to_bits(), b.2, b.3)));
    units.dedup();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let results: Vec<(CellResult, Timing)> = pool.install(|| {
        units
            .par_iter()
            .map(|&(mechanism, ratio, trial, method)| {
                let start = Instant::now();
                let cell = run_cell(config, &trials[trial], mechanism, ratio, trial, method);
                let timing = Timing {
                    mechanism,
                    ratio,
                    trial,
                    method,
                    seconds: start.elapsed().as_secs_f64(),
                };
                (cell, timing)
            })
            .collect()
    });
    let (cells, timings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let summaries = summarize(&cells);
    Ok(ExperimentRun {
        report: ExperimentReport {
            schema: SCHEMA,
            metric_units: "original".into(),
            energy_space: "scaled".into(),
            config: config.clone(),
            cells,
            summaries,
        },
        timings,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

fn table(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

/// CSV tables keyed by file name.
pub fn tables(report: &ExperimentReport) -> Vec<(&'static str, String)> {
    let s = &report.summaries;
    let key = |x: &Summary| vec![x.mechanism.to_string(), format!("{}", x.ratio), x.method.name()];
    let fig3 = table(
        &["mechanism", "ratio", "method", "trials_ok", "rmse", "mae", "rmse_normalized", "mae_normalized"],
        s.iter().map(|x| {
            let mut r = key(x);
            r.extend([
                x.ok.to_string(),
                fmt_opt(x.rmse),
                fmt_opt(x.mae),
                fmt_opt(x.rmse_normalized),
                fmt_opt(x.mae_normalized),
            ]);
            r
        }),
    );
    let fig5 = table(
        &["mechanism", "ratio", "method", "delta_e", "abs_delta_e", "draft_delta_e"],
        s.iter().map(|x| {
            let mut r = key(x);
            r.extend([fmt_opt(x.delta_e), fmt_opt(x.abs_delta_e), fmt_opt(x.draft_delta_e)]);
            r
        }),
    );
    let ablation = table(
        &["mechanism", "ratio", "method", "rmse", "mae"],
        s.iter()
            .filter(|x| {
                matches!(
                    x.method,
                    Method::Glpn(glpn_core::glpn::DraftKind::Dgcn) | Method::GlpnWithoutResidual | Method::GlpnWithoutPyramid
                )
            })
            .map(|x| {
                let mut r = key(x);
                r.extend([fmt_opt(x.rmse), fmt_opt(x.mae)]);
                r
            }),
    );
    let draft = table(
        &["mechanism", "ratio", "method", "rmse", "rmse_normalized", "mae_normalized"],
        s.iter()
            .filter(|x| matches!(x.method, Method::Mean | Method::Glpn(_)))
            .map(|x| {
                let mut r = key(x);
                r.extend([fmt_opt(x.rmse), fmt_opt(x.rmse_normalized), fmt_opt(x.mae_normalized)]);
                r
            }),
    );
    let gap = table(
        &["mechanism", "ratio", "method", "delta_e", "rmse"],
        s.iter().map(|x| {
            let mut r = key(x);
            r.extend([fmt_opt(x.delta_e), fmt_opt(x.rmse)]);
            r
        }),
    );
    vec![
        ("fig3_normalized.csv", fig3),
        ("fig5_energy.csv", fig5),
        ("table1_ablation.csv", ablation),
        ("table4_draft.csv", draft),
        ("table5_gap.csv", gap),
    ]
}

fn write_file(path: &Path, body: &[u8]) -> Result<(), ExperimentError> {
    fs::write(path, body).map_err(|e| ExperimentError::Write {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn report_json(report: &ExperimentReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// Writes `report.json`, `timings.json` and the CSV tables into `dir`.
pub fn write_outputs(run: &ExperimentRun, dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::Write {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    write_file(&dir.join("report.json"), report_json(&run.report).as_bytes())?;
    let timings = serde_json::to_string_pretty(&run.timings).expect("timings serialize");
    write_file(&dir.join("timings.json"), timings.as_bytes())?;
    for (name, body) in tables(&run.report) {
        write_file(&dir.join(name), body.as_bytes())?;
    }
    Ok(())
}
