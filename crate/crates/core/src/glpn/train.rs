//! Full-batch trainer shared by the pyramid model and the GCN baseline.
//!
//! Observed entries are split into a training part and a held-out
//! validation part. Each epoch hides a fraction of the training entries from
//! the model input (cycling through a fixed set of views) and scores the
//! reconstruction on exactly those hidden entries, so the model cannot reach
//! zero loss by copying its input.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Tape, Var};
use crate::error::{Error, Result};
use crate::missing::is_row_structured;
use crate::rng::{derive_seed, stream, StreamRng};
use crate::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Number of distinct hiding patterns cycled through during training.
    pub views: usize,
    /// Fraction of training entries hidden from the input in each view.
    pub hide_fraction: f64,
    /// Fraction of observed entries held out for validation.
    pub validation_fraction: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 800,
            adam: AdamConfig::default(),
            seed: 0,
            views: 8,
            hide_fraction: 0.2,
            validation_fraction: 0.2,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.views == 0 {
            return Err(Error::param("need at least one training view"));
        }
        for (name, f) in [("hide_fraction", self.hide_fraction), ("validation_fraction", self.validation_fraction)] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::param(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Masks derived from the observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: DenseMatrix,
    pub validation: DenseMatrix,
}

/// One training view: what the model sees and what it is scored on.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub input_mask: DenseMatrix,
    pub target_mask: DenseMatrix,
}

/// Observed units: whole rows for row-structured masks, entries otherwise.
fn observed_units(mask: &DenseMatrix) -> (bool, Vec<usize>) {
    let rows = is_row_structured(mask) && mask.cols() > 1;
    let units = if rows {
        (0..mask.rows()).filter(|&i| mask.get(i, 0) != 0.0).collect()
    } else {
        (0..mask.data().len()).filter(|&k| mask.data()[k] != 0.0).collect()
    };
    (rows, units)
}

fn unit_mask(shape: (usize, usize), rows: bool, units: &[usize]) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(shape.0, shape.1);
    for &u in units {
        if rows {
            m.row_mut(u).iter_mut().for_each(|v| *v = 1.0);
        } else {
            m.data_mut()[u] = 1.0;
        }
    }
    m
}

/// Picks `round(fraction · len)` units, but at least one when `at_least_one`
/// and there are two or more to choose from.
fn choose(units: &[usize], fraction: f64, at_least_one: bool, rng: &mut StreamRng) -> (Vec<usize>, Vec<usize>) {
    let mut k = (fraction * units.len() as f64).round() as usize;
    if at_least_one && k == 0 && units.len() >= 2 {
        k = 1;
    }
    let k = k.min(units.len());
    let mut picked = vec![false; units.len()];
    for i in sample(rng, units.len(), k) {
        picked[i] = true;
    }
    let (mut chosen, mut rest) = (Vec::new(), Vec::new());
    for (i, &u) in units.iter().enumerate() {
        if picked[i] {
            chosen.push(u);
        } else {
            rest.push(u);
        }
    }
    (chosen, rest)
}

pub fn split_observed(mask: &DenseMatrix, fraction: f64, seed: u64) -> Split {
    let (rows, units) = observed_units(mask);
    let mut rng = stream(seed);
    let (held, kept) = choose(&units, fraction, false, &mut rng);
    Split {
        train: unit_mask(mask.shape(), rows, &kept),
        validation: unit_mask(mask.shape(), rows, &held),
    }
}

pub fn make_views(train: &DenseMatrix, settings: &TrainSettings) -> Result<Vec<View>> {
    let (rows, units) = observed_units(train);
    if units.is_empty() {
        return Err(Error::EmptyMask);
    }
    (0..settings.views)
        .map(|v| {
            let mut rng = stream(derive_seed(settings.seed, 1000 + v as u64));
            let (hidden, visible) = choose(&units, settings.hide_fraction, true, &mut rng);
            if hidden.is_empty() {
                // A single training unit is scored while staying visible.
                return Ok(View {
                    input_mask: train.clone(),
                    target_mask: train.clone(),
                });
            }
            Ok(View {
                input_mask: unit_mask(train.shape(), rows, &visible),
                target_mask: unit_mask(train.shape(), rows, &hidden),
            })
        })
        .collect()
}

/// Mean squared error over the entries selected by `mask`.
pub fn masked_mse_loss(tape: &mut Tape<f64>, pred: Var, target: &DenseMatrix, mask: &DenseMatrix) -> Result<Var> {
    let count = mask.data().iter().filter(|&&m| m != 0.0).count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let sse = tape.masked_sse(pred, target, mask)?;
    Ok(tape.scale(sse, 1.0 / count as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub params: Vec<DenseMatrix>,
    pub loss_curve: Vec<f64>,
    /// RMSE on held-out observed entries, scaled units.
    pub validation_rmse: Option<f64>,
}

/// Trains `params` with Adam.
///
/// `prepare` turns a (masked input, input mask) pair into whatever the
/// forward pass needs and is called once per view; `forward` records the
/// model on a tape and returns the prediction node.
pub fn fit<C, P, F>(
    target: &DenseMatrix,
    mask: &DenseMatrix,
    init: Vec<DenseMatrix>,
    settings: &TrainSettings,
    prepare: P,
    forward: F,
) -> Result<Fitted>
where
    P: Fn(&DenseMatrix, &DenseMatrix) -> Result<C>,
    F: Fn(&mut Tape<f64>, &[Var], &C) -> Result<Var>,
{
    settings.validate()?;
    if target.shape() != mask.shape() {
        return Err(Error::Dimension {
            op: "fit",
            left: target.shape(),
            right: mask.shape(),
        });
    }
    let split = split_observed(mask, settings.validation_fraction, derive_seed(settings.seed, 7));
    let mut params = init;
    let mut loss_curve = Vec::with_capacity(settings.epochs);

    if settings.epochs > 0 {
        let views = make_views(&split.train, settings)?;
        let contexts = views
            .iter()
            .map(|v| prepare(&target.hadamard(&v.input_mask)?, &v.input_mask))
            .collect::<Result<Vec<C>>>()?;
        let shapes: Vec<_> = params.iter().map(DenseMatrix::shape).collect();
        let mut adam = Adam::new(settings.adam, &shapes)?;

        for epoch in 0..settings.epochs {
            let v = epoch % views.len();
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
            let pred = forward(&mut tape, &vars, &contexts[v])?;
            let loss = masked_mse_loss(&mut tape, pred, target, &views[v].target_mask)?;
            let value = tape.value(loss)[(0, 0)];
            if !value.is_finite() {
                return Err(Error::TrainingDivergence { epoch });
            }
            tape.backward(loss)?;
            let grads: Vec<DenseMatrix> = vars
                .iter()
                .zip(&params)
                .map(|(&v, p)| {
                    tape.grad(v)
                        .cloned()
                        .unwrap_or_else(|| DenseMatrix::zeros(p.rows(), p.cols()))
                })
                .collect();
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDivergence { epoch });
            }
            adam.step(&mut params, &grads)?;
            loss_curve.push(value);
        }
    }

    let validation_rmse = if split.validation.sum() > 0.0 {
        let ctx = prepare(&target.hadamard(&split.train)?, &split.train)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
        let pred = forward(&mut tape, &vars, &ctx)?;
        let mse = masked_mse_loss(&mut tape, pred, target, &split.validation)?;
        Some(tape.value(mse)[(0, 0)].sqrt())
    } else {
        None
    };

    Ok(Fitted {
        params,
        loss_curve,
        validation_rmse,
    })
}
