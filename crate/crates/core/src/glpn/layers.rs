//! Building blocks of the pyramid model, each recorded on a tape. The plain
//! matrix entry points evaluate the same code on a throwaway tape.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::augmented_laplacian;
use crate::DenseMatrix;

/// `D⁻¹A` with zero rows kept at zero.
pub fn random_walk(a: &DenseMatrix) -> DenseMatrix {
    let deg = a.row_sums();
    DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| {
        if deg[i] > 0.0 {
            a.get(i, j) / deg[i]
        } else {
            0.0
        }
    })
}

/// Precomputed diffusion powers `(D_O⁻¹A)^m` and `(D_I⁻¹Aᵀ)^m` for
/// `m = 1..steps`. The `m = 0` terms are the identity and never stored.
#[derive(Debug, Clone)]
pub struct Diffusion {
    pub steps: usize,
    pub outward: Vec<DenseMatrix>,
    /// `None` when `A` is symmetric, in which case both directions coincide.
    pub inward: Option<Vec<DenseMatrix>>,
}

impl Diffusion {
    pub fn new(a: &DenseMatrix, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("diffusion needs at least one step"));
        }
        let powers = |p: DenseMatrix| -> Result<Vec<DenseMatrix>> {
            let mut out: Vec<DenseMatrix> = Vec::with_capacity(steps.saturating_sub(1));
            for _ in 1..steps {
                let next = match out.last() {
                    Some(prev) => prev.matmul(&p)?,
                    None => p.clone(),
                };
                out.push(next);
            }
            Ok(out)
        };
        let outward = powers(random_walk(a))?;
        let inward = if a.is_symmetric(0.0) {
            None
        } else {
            Some(powers(random_walk(&a.transpose()))?)
        };
        Ok(Self { steps, outward, inward })
    }
}

/// Tape handles for a [`Diffusion`], added once per tape.
#[derive(Debug, Clone)]
pub struct DiffusionVars {
    outward: Vec<Var>,
    inward: Option<Vec<Var>>,
}

impl DiffusionVars {
    pub fn new(tape: &mut Tape<f64>, d: &Diffusion) -> Self {
        Self {
            outward: d.outward.iter().map(|p| tape.constant(p.clone())).collect(),
            inward: d
                .inward
                .as_ref()
                .map(|ps| ps.iter().map(|p| tape.constant(p.clone())).collect()),
        }
    }

    pub fn steps(&self) -> usize {
        self.outward.len() + 1
    }
}

/// `σ(Σ_m θ_{m,1}(D_O⁻¹A)^m H + θ_{m,2}(D_I⁻¹Aᵀ)^m H)` with `θ` of shape
/// `steps × 2`.
pub fn dgcn_on_tape(tape: &mut Tape<f64>, h: Var, theta: Var, diff: &DiffusionVars, relu: bool) -> Result<Var> {
    if tape.shape(theta) != (diff.steps(), 2) {
        return Err(Error::Dimension {
            op: "dgcn theta",
            left: tape.shape(theta),
            right: (diff.steps(), 2),
        });
    }
    let mut terms = vec![h, h];
    for m in 0..diff.outward.len() {
        let out = tape.matmul(diff.outward[m], h)?;
        let inw = match &diff.inward {
            Some(ps) => tape.matmul(ps[m], h)?,
            None => out,
        };
        terms.push(out);
        terms.push(inw);
    }
    let z = tape.combine(theta, &terms)?;
    Ok(if relu { tape.relu(z) } else { z })
}

pub fn dgcn_layer(h: &DenseMatrix, a: &DenseMatrix, theta: &DenseMatrix, steps: usize, relu: bool) -> Result<DenseMatrix> {
    let diff = Diffusion::new(a, steps)?;
    let mut tape = Tape::new();
    let dv = DiffusionVars::new(&mut tape, &diff);
    let hv = tape.constant(h.clone());
    let tv = tape.constant(theta.clone());
    let out = dgcn_on_tape(&mut tape, hv, tv, &dv, relu)?;
    Ok(tape.value(out).clone())
}

/// `softmax(tanh(X W₁) W₂)`, one row per fine node.
pub fn assignment_on_tape(tape: &mut Tape<f64>, x: Var, w1: Var, w2: Var) -> Result<Var> {
    let h = tape.matmul(x, w1)?;
    let h = tape.tanh(h);
    let logits = tape.matmul(h, w2)?;
    Ok(tape.row_softmax(logits))
}

pub fn pool_assignment(x: &DenseMatrix, w1: &DenseMatrix, w2: &DenseMatrix) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let (xv, w1v, w2v) = (tape.constant(x.clone()), tape.constant(w1.clone()), tape.constant(w2.clone()));
    let s = assignment_on_tape(&mut tape, xv, w1v, w2v)?;
    Ok(tape.value(s).clone())
}

/// Coarse features `SᵀX`.
pub fn pool_features_on_tape(tape: &mut Tape<f64>, x: Var, s: Var) -> Result<Var> {
    let st = tape.transpose(s);
    tape.matmul(st, x)
}

/// Coarse adjacency `softmax(SᵀAS)`.
pub fn pool_adjacency_on_tape(tape: &mut Tape<f64>, a: Var, s: Var) -> Result<Var> {
    let st = tape.transpose(s);
    let sta = tape.matmul(st, a)?;
    let stas = tape.matmul(sta, s)?;
    Ok(tape.row_softmax(stas))
}

pub fn pool(x: &DenseMatrix, a: &DenseMatrix, s: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let mut tape = Tape::new();
    let (xv, av, sv) = (tape.constant(x.clone()), tape.constant(a.clone()), tape.constant(s.clone()));
    let xp = pool_features_on_tape(&mut tape, xv, sv)?;
    let ap = pool_adjacency_on_tape(&mut tape, av, sv)?;
    Ok((tape.value(xp).clone(), tape.value(ap).clone()))
}

/// `S(X_up + R)`.
pub fn unpool_on_tape(tape: &mut Tape<f64>, x_up: Var, residual: Option<Var>, s: Var) -> Result<Var> {
    let sum = match residual {
        Some(r) => tape.add(x_up, r)?,
        None => x_up,
    };
    tape.matmul(s, sum)
}

pub fn unpool(x_up: &DenseMatrix, r: &DenseMatrix, s: &DenseMatrix) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let (xv, rv, sv) = (tape.constant(x_up.clone()), tape.constant(r.clone()), tape.constant(s.clone()));
    let out = unpool_on_tape(&mut tape, xv, Some(rv), sv)?;
    Ok(tape.value(out).clone())
}

/// `I + Σ_{m=1}^{order} Δ̃^m / m!`.
pub fn maclaurin_polynomial(laplacian: &DenseMatrix, order: usize) -> Result<DenseMatrix> {
    if order == 0 {
        return Err(Error::param("Maclaurin order must be at least 1"));
    }
    let n = laplacian.rows();
    let mut out = DenseMatrix::identity(n);
    let mut term = DenseMatrix::identity(n);
    for m in 1..=order {
        term = term.matmul(laplacian)?.scale(1.0 / m as f64);
        out.add_assign(&term)?;
    }
    Ok(out)
}

/// Same polynomial for a Laplacian that lives on the tape.
pub fn maclaurin_on_tape(tape: &mut Tape<f64>, laplacian: Var, order: usize) -> Result<Var> {
    if order == 0 {
        return Err(Error::param("Maclaurin order must be at least 1"));
    }
    let n = tape.shape(laplacian).0;
    let mut out = tape.constant(DenseMatrix::identity(n));
    let mut term = out;
    for m in 1..=order {
        let next = tape.matmul(term, laplacian)?;
        term = tape.scale(next, 1.0 / m as f64);
        out = tape.add(out, term)?;
    }
    Ok(out)
}

/// Augmented normalized Laplacian of a coarse adjacency held on the tape.
///
/// The row-softmax adjacency is neither symmetric nor hollow, so it is
/// symmetrized and its diagonal dropped before the usual construction.
pub fn coarse_laplacian_on_tape(tape: &mut Tape<f64>, a: Var) -> Result<Var> {
    let n = tape.shape(a).0;
    let at = tape.transpose(a);
    let sum = tape.add(a, at)?;
    let sym = tape.scale(sum, 0.5);
    let hollow = tape.constant(DenseMatrix::from_fn(n, n, |i, j| (i != j) as u8 as f64));
    let off = tape.hadamard(sym, hollow)?;
    let eye = tape.constant(DenseMatrix::identity(n));
    let tilde = tape.add(off, eye)?;
    let ones_col = tape.constant(DenseMatrix::filled(n, 1, 1.0));
    let ones_row = tape.constant(DenseMatrix::filled(1, n, 1.0));
    let deg = tape.matmul(tilde, ones_col)?;
    let inv_sqrt = tape.pow(deg, -0.5)?;
    let rows = tape.matmul(inv_sqrt, ones_row)?;
    let cols = tape.transpose(rows);
    let left = tape.hadamard(rows, tilde)?;
    let norm = tape.hadamard(left, cols)?;
    tape.sub(eye, norm)
}

/// `(I + Σ Δ̃^m/m!) X W₃`, optionally followed by ReLU.
pub fn residual_on_tape(tape: &mut Tape<f64>, poly: Var, x: Var, w3: Var, relu: bool) -> Result<Var> {
    let px = tape.matmul(poly, x)?;
    let r = tape.matmul(px, w3)?;
    Ok(if relu { tape.relu(r) } else { r })
}

pub fn gdn_residual(x: &DenseMatrix, laplacian: &DenseMatrix, w3: &DenseMatrix, order: usize) -> Result<DenseMatrix> {
    let poly = maclaurin_polynomial(laplacian, order)?;
    poly.matmul(x)?.matmul(w3)
}

/// Convenience: residual of `x` on the graph with adjacency `a`.
pub fn gdn_residual_on_graph(x: &DenseMatrix, a: &DenseMatrix, w3: &DenseMatrix, order: usize) -> Result<DenseMatrix> {
    gdn_residual(x, &augmented_laplacian(a)?, w3, order)
}
