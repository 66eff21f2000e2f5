use serde::{Deserialize, Serialize};

use super::layers::{
    assignment_on_tape, coarse_laplacian_on_tape, dgcn_on_tape, maclaurin_on_tape, maclaurin_polynomial,
    pool_adjacency_on_tape, pool_features_on_tape, residual_on_tape, unpool_on_tape, Diffusion, DiffusionVars,
};
use super::train::{fit, masked_mse_loss, Fitted};
use super::{gcn_draft_config, glorot, structural_draft, DraftKind, GlpnConfig};
use crate::autodiff::{Tape, Var};
use crate::baselines::{gcn_refine, mean_impute, restore_observed, ImputeResult};
use crate::error::{Error, Result};
use crate::graph::augmented_laplacian;
use crate::rng::{derive_seed, stream};
use crate::{DenseMatrix, Graph};

/// How the parameters were initialized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitRecord {
    pub scheme: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelParams {
    /// `d × hidden`.
    pub w1: DenseMatrix,
    /// `hidden × r_{l+1}`.
    pub w2: DenseMatrix,
    /// `d × d` residual weight.
    pub w3: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlpnParams {
    /// One `dgcn_steps × 2` filter per draft layer.
    pub draft_theta: Vec<DenseMatrix>,
    pub levels: Vec<LevelParams>,
    /// `d × d` weight on the decoded pyramid branch.
    pub decoder: DenseMatrix,
    pub final_theta: Option<DenseMatrix>,
    pub init: InitRecord,
}

impl GlpnParams {
    /// Tensors in a fixed order, paired with stable names.
    pub fn named(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = Vec::new();
        for (k, t) in self.draft_theta.iter().enumerate() {
            out.push((format!("draft.{k}.theta"), t));
        }
        for (l, p) in self.levels.iter().enumerate() {
            out.push((format!("level.{l}.w1"), &p.w1));
            out.push((format!("level.{l}.w2"), &p.w2));
            out.push((format!("level.{l}.w3"), &p.w3));
        }
        out.push(("decoder".into(), &self.decoder));
        if let Some(t) = &self.final_theta {
            out.push(("final.theta".into(), t));
        }
        out
    }

    pub fn flatten(&self) -> Vec<DenseMatrix> {
        self.named().into_iter().map(|(_, m)| m.clone()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten), using `self` as the template.
    pub fn with_flat(&self, flat: Vec<DenseMatrix>) -> Result<Self> {
        let expected: Vec<_> = self.named().iter().map(|(_, m)| m.shape()).collect();
        let got: Vec<_> = flat.iter().map(DenseMatrix::shape).collect();
        if expected != got {
            return Err(Error::contract(format!("parameter shapes {got:?}, expected {expected:?}")));
        }
        let mut it = flat.into_iter();
        let mut next = || it.next().expect("length checked above");
        let draft_theta = self.draft_theta.iter().map(|_| next()).collect();
        let levels = self
            .levels
            .iter()
            .map(|_| LevelParams {
                w1: next(),
                w2: next(),
                w3: next(),
            })
            .collect();
        let decoder = next();
        let final_theta = self.final_theta.as_ref().map(|_| next());
        Ok(Self {
            draft_theta,
            levels,
            decoder,
            final_theta,
            init: self.init.clone(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.is_finite())
    }
}

struct ParamVars {
    draft_theta: Vec<Var>,
    levels: Vec<(Var, Var, Var)>,
    decoder: Var,
    final_theta: Option<Var>,
}

impl ParamVars {
    fn new(template: &GlpnParams, vars: &[Var]) -> Self {
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("one var per tensor");
        let draft_theta = template.draft_theta.iter().map(|_| next()).collect();
        let levels = template.levels.iter().map(|_| (next(), next(), next())).collect();
        let decoder = next();
        let final_theta = template.final_theta.as_ref().map(|_| next());
        Self {
            draft_theta,
            levels,
            decoder,
            final_theta,
        }
    }
}

/// Per-input data the forward pass needs.
#[derive(Debug, Clone)]
pub enum Prepared {
    /// Draft computed outside the model.
    Fixed(DenseMatrix),
    /// Diffusion draft trained with the model: `M∘X + (1−M)∘DGCN(X*)`.
    Learned {
        observed: DenseMatrix,
        complement: DenseMatrix,
        seed: DenseMatrix,
    },
}

/// Graph-dependent operators plus the configuration.
#[derive(Debug, Clone)]
pub struct GlpnModel {
    pub config: GlpnConfig,
    n: usize,
    d: usize,
    clusters: Vec<usize>,
    adjacency: DenseMatrix,
    diffusion: Diffusion,
    poly0: DenseMatrix,
}

impl GlpnModel {
    pub fn new(adjacency: &DenseMatrix, d: usize, config: &GlpnConfig) -> Result<Self> {
        let n = adjacency.rows();
        config.validate(n)?;
        if d == 0 {
            return Err(Error::param("feature dimension must be positive"));
        }
        let laplacian = augmented_laplacian(adjacency)?;
        Ok(Self {
            config: config.clone(),
            n,
            d,
            clusters: config.cluster_sizes(n)?,
            adjacency: adjacency.clone(),
            diffusion: Diffusion::new(adjacency, config.dgcn_steps)?,
            poly0: maclaurin_polynomial(&laplacian, config.maclaurin_order)?,
        })
    }

    pub fn clusters(&self) -> &[usize] {
        &self.clusters
    }

    fn identity_theta(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.config.dgcn_steps, 2);
        t.set(0, 0, 0.5);
        t.set(0, 1, 0.5);
        t
    }

    /// Glorot-uniform weights. The decoder starts at zero, so the pyramid
    /// branch is silent at initialization; diffusion filters start at the
    /// identity.
    pub fn init_params(&self, seed: u64) -> GlpnParams {
        let mut rng = stream(seed);
        let (d, h) = (self.d, self.config.hidden);
        let draft_layers = if self.config.draft == DraftKind::Dgcn {
            self.config.draft_layers
        } else {
            0
        };
        let draft_theta = (0..draft_layers).map(|_| self.identity_theta()).collect();
        let levels = self
            .clusters
            .iter()
            .map(|&r| LevelParams {
                w1: glorot(d, h, &mut rng),
                w2: glorot(h, r, &mut rng),
                w3: glorot(d, d, &mut rng),
            })
            .collect();
        GlpnParams {
            draft_theta,
            levels,
            decoder: DenseMatrix::zeros(d, d),
            final_theta: self.config.final_dgcn.then(|| self.identity_theta()),
            init: InitRecord {
                scheme: "glorot-uniform, zero decoder".into(),
                seed,
            },
        }
    }

    /// Parameters with identity residual and decoder weights, used to study
    /// the linearized model.
    pub fn analysis_params(&self, pooling: Vec<(DenseMatrix, DenseMatrix)>) -> Result<GlpnParams> {
        if pooling.len() != self.clusters.len() {
            return Err(Error::param("one (W1, W2) pair per level"));
        }
        let mut p = self.init_params(0);
        for (lp, (w1, w2)) in p.levels.iter_mut().zip(pooling) {
            lp.w1 = w1;
            lp.w2 = w2;
            lp.w3 = DenseMatrix::identity(self.d);
        }
        p.decoder = DenseMatrix::identity(self.d);
        let shapes_ok = p
            .levels
            .iter()
            .zip(&self.clusters)
            .all(|(lp, &r)| lp.w1.shape() == (self.d, self.config.hidden) && lp.w2.shape() == (self.config.hidden, r));
        if !shapes_ok {
            return Err(Error::param("pooling weights do not match the configured widths"));
        }
        Ok(p)
    }

    /// Input for the forward pass on the visible part of `view`.
    pub fn prepare(&self, view: &Graph) -> Result<Prepared> {
        if view.n() != self.n || view.d() != self.d {
            return Err(Error::Dimension {
                op: "GlpnModel::prepare",
                left: (self.n, self.d),
                right: (view.n(), view.d()),
            });
        }
        let cfg = &self.config;
        Ok(match cfg.draft {
            DraftKind::Dgcn => {
                let m = view.mask();
                Prepared::Learned {
                    observed: view.features().clone(),
                    complement: m.map(|v| 1.0 - v),
                    seed: mean_impute(view.features(), m)?.x_hat,
                }
            }
            DraftKind::Gcn => Prepared::Fixed(gcn_refine(view, &gcn_draft_config(cfg))?.x_hat),
            k => Prepared::Fixed(structural_draft(k, &cfg.draft_options, view)?),
        })
    }

    fn draft_on_tape(&self, tape: &mut Tape<f64>, v: &ParamVars, diff: &DiffusionVars, input: &Prepared) -> Result<Var> {
        match input {
            Prepared::Fixed(xd) => Ok(tape.constant(xd.clone())),
            Prepared::Learned {
                observed,
                complement,
                seed,
            } => {
                if v.draft_theta.is_empty() {
                    return Err(Error::contract("diffusion draft without draft parameters"));
                }
                let mut h = tape.constant(seed.clone());
                let last = v.draft_theta.len() - 1;
                for (k, &theta) in v.draft_theta.iter().enumerate() {
                    h = dgcn_on_tape(tape, h, theta, diff, k < last)?;
                }
                let obs = tape.constant(observed.clone());
                let comp = tape.constant(complement.clone());
                let fill = tape.hadamard(comp, h)?;
                tape.add(obs, fill)
            }
        }
    }

    /// Pyramid and residual branches on top of a draft.
    fn refine_on_tape(&self, tape: &mut Tape<f64>, v: &ParamVars, diff: &DiffusionVars, xd: Var) -> Result<Var> {
        let cfg = &self.config;
        let levels = if cfg.pyramid { self.clusters.len() } else { 0 };
        let residual_levels = match (cfg.residual, cfg.pyramid) {
            (false, _) => 0,
            (true, false) => 1,
            (true, true) => self.clusters.len(),
        };

        let mut xs = vec![xd];
        let mut assignments = Vec::with_capacity(levels);
        let mut polys = Vec::with_capacity(residual_levels);
        if residual_levels > 0 {
            polys.push(tape.constant(self.poly0.clone()));
        }
        let mut adj = (residual_levels > 1).then(|| tape.constant(self.adjacency.clone()));
        for l in 0..levels {
            let (w1, w2, _) = v.levels[l];
            let s = assignment_on_tape(tape, xs[l], w1, w2)?;
            xs.push(pool_features_on_tape(tape, xs[l], s)?);
            if l + 1 < residual_levels {
                let a = adj.expect("coarse adjacency tracked when deeper residuals exist");
                let coarse = pool_adjacency_on_tape(tape, a, s)?;
                let lap = coarse_laplacian_on_tape(tape, coarse)?;
                polys.push(maclaurin_on_tape(tape, lap, cfg.maclaurin_order)?);
                adj = Some(coarse);
            }
            assignments.push(s);
        }
        let residuals = (0..residual_levels)
            .map(|l| residual_on_tape(tape, polys[l], xs[l], v.levels[l].2, cfg.residual_relu))
            .collect::<Result<Vec<Var>>>()?;

        let pyramid = if levels > 0 {
            let mut up = xs[levels];
            for l in (0..levels).rev() {
                up = unpool_on_tape(tape, up, residuals.get(l + 1).copied(), assignments[l])?;
            }
            let decoded = tape.matmul(up, v.decoder)?;
            Some(tape.scale(decoded, cfg.alpha))
        } else {
            None
        };
        let mut out = match (pyramid, residuals.first()) {
            (Some(p), Some(&r)) => tape.add(p, r)?,
            (Some(p), None) => p,
            (None, Some(&r)) => r,
            (None, None) => unreachable!("config validation requires a branch"),
        };
        if let Some(theta) = v.final_theta {
            out = dgcn_on_tape(tape, out, theta, diff, false)?;
        }
        Ok(out)
    }

    /// Records the full model and returns the prediction node.
    pub fn record(&self, tape: &mut Tape<f64>, template: &GlpnParams, vars: &[Var], input: &Prepared) -> Result<Var> {
        let v = ParamVars::new(template, vars);
        let diff = DiffusionVars::new(tape, &self.diffusion);
        let xd = self.draft_on_tape(tape, &v, &diff, input)?;
        self.refine_on_tape(tape, &v, &diff, xd)
    }

    /// Raw model output (observed entries not restored).
    pub fn output(&self, params: &GlpnParams, input: &Prepared) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.flatten().into_iter().map(|m| tape.constant(m)).collect();
        let out = self.record(&mut tape, params, &vars, input)?;
        Ok(tape.value(out).clone())
    }

    /// Refinement of a given draft, skipping the draft stage.
    pub fn forward_draft(&self, params: &GlpnParams, xd: &DenseMatrix) -> Result<DenseMatrix> {
        self.output(params, &Prepared::Fixed(xd.clone()))
    }

    /// Draft produced by the model's own draft stage.
    pub fn draft(&self, params: &GlpnParams, input: &Prepared) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.flatten().into_iter().map(|m| tape.constant(m)).collect();
        let v = ParamVars::new(params, &vars);
        let diff = DiffusionVars::new(&mut tape, &self.diffusion);
        let xd = self.draft_on_tape(&mut tape, &v, &diff, input)?;
        Ok(tape.value(xd).clone())
    }

    /// Imputation of `graph`'s missing entries.
    pub fn predict(&self, params: &GlpnParams, graph: &Graph) -> Result<DenseMatrix> {
        let out = self.output(params, &self.prepare(graph)?)?;
        restore_observed(graph.features(), graph.mask(), &out)
    }

    /// Mean squared reconstruction error over `mask`, with gradients for
    /// every tensor of `params` in [`GlpnParams::flatten`] order.
    pub fn loss_and_grads(
        &self,
        params: &GlpnParams,
        input: &Prepared,
        target: &DenseMatrix,
        mask: &DenseMatrix,
    ) -> Result<(f64, Vec<DenseMatrix>)> {
        let mut tape = Tape::new();
        let flat = params.flatten();
        let vars: Vec<Var> = flat.iter().map(|m| tape.param(m.clone())).collect();
        let out = self.record(&mut tape, params, &vars, input)?;
        let loss = masked_mse_loss(&mut tape, out, target, mask)?;
        tape.backward(loss)?;
        let grads = vars
            .iter()
            .zip(&flat)
            .map(|(&v, m)| tape.grad(v).cloned().unwrap_or_else(|| DenseMatrix::zeros(m.rows(), m.cols())))
            .collect();
        Ok((tape.value(loss)[(0, 0)], grads))
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: GlpnParams,
    pub loss_curve: Vec<f64>,
    pub validation_rmse: Option<f64>,
}

/// Fits the model to the observed entries of `graph`.
pub fn train(graph: &Graph, config: &GlpnConfig) -> Result<(GlpnModel, Trained)> {
    let model = GlpnModel::new(graph.adjacency(), graph.d(), config)?;
    let template = model.init_params(derive_seed(config.train.seed, 1));
    let prepare = |x_in: &DenseMatrix, m_in: &DenseMatrix| -> Result<Prepared> {
        let _ = x_in;
        model.prepare(&graph.with_mask(m_in.clone())?)
    };
    let forward = |tape: &mut Tape<f64>, vars: &[Var], input: &Prepared| model.record(tape, &template, vars, input);
    let Fitted {
        params,
        loss_curve,
        validation_rmse,
    } = fit(graph.features(), graph.mask(), template.flatten(), &config.train, prepare, forward)?;
    let params = template.with_flat(params)?;
    Ok((
        model,
        Trained {
            params,
            loss_curve,
            validation_rmse,
        },
    ))
}

/// Trains on `graph` and imputes its missing entries.
pub fn impute(graph: &Graph, config: &GlpnConfig) -> Result<(ImputeResult<f64>, Trained)> {
    let (model, trained) = train(graph, config)?;
    let x_hat = model.predict(&trained.params, graph)?;
    let method = match (config.residual, config.pyramid) {
        (true, true) => "glpn",
        (false, true) => "glpn-wo-r",
        (true, false) => "glpn-wo-p",
        (false, false) => unreachable!("validated config"),
    };
    Ok((
        ImputeResult {
            x_hat,
            method: method.into(),
            iterations: config.train.epochs,
            converged: true,
        },
        trained,
    ))
}

/// Trains the diffusion draft stage on its own.
pub(crate) fn dgcn_draft(graph: &Graph, config: &GlpnConfig) -> Result<DenseMatrix> {
    let model = GlpnModel::new(graph.adjacency(), graph.d(), config)?;
    let template = model.init_params(derive_seed(config.train.seed, 1));
    let theta: Vec<DenseMatrix> = template.draft_theta.clone();
    let prepare = |_: &DenseMatrix, m_in: &DenseMatrix| model.prepare(&graph.with_mask(m_in.clone())?);
    let draft_only = |tape: &mut Tape<f64>, vars: &[Var], input: &Prepared| -> Result<Var> {
        let mut full: Vec<Var> = vars.to_vec();
        for m in template.flatten().into_iter().skip(vars.len()) {
            full.push(tape.constant(m));
        }
        let v = ParamVars::new(&template, &full);
        let diff = DiffusionVars::new(tape, &model.diffusion);
        model.draft_on_tape(tape, &v, &diff, input)
    };
    let fitted = fit(graph.features(), graph.mask(), theta, &config.train, prepare, draft_only)?;
    let mut params = template.clone();
    params.draft_theta = fitted.params;
    model.draft(&params, &model.prepare(graph)?)
}
