//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and `backward` is a single reverse sweep. Only
//! nodes that depend on a trainable parameter receive gradients.

mod adam;

pub use adam::{Adam, AdamConfig};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Hadamard(Var, Var),
    Transpose(Var),
    RowSoftmax(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Pow(Var, T),
    Sum(Var),
    /// `Σ mask ∘ (pred − target)²` with constant target and mask.
    MaskedSse {
        pred: Var,
        target: Matrix<T>,
        mask: Matrix<T>,
    },
    /// `Σ_i w_i · term_i` with `w` read row-major from a weight matrix.
    Combine { weights: Var, terms: Vec<Var> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Matrix<T>,
    trainable: bool,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Matrix<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            value,
            trainable: false,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(Op::Leaf, value, &[])
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        let v = self.push(Op::Leaf, value, &[]);
        self.nodes[v.0].trainable = true;
        self.nodes[v.0].needs_grad = true;
        v
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn is_trainable(&self, v: Var) -> bool {
        self.nodes[v.0].trainable
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grads(&mut self) {
        self.grads.clear();
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).scale(c);
        self.push(Op::Scale(a, c), value, &[a])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), value, &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value, &[a])
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let value = self.value(a).row_softmax();
        self.push(Op::RowSoftmax(a), value, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        self.push(Op::Tanh(a), value, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(T::zero()));
        self.push(Op::Relu(a), value, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(Op::Sigmoid(a), value, &[a])
    }

    /// Element-wise power; entries must be positive when `p` is fractional
    /// or negative.
    pub fn pow(&mut self, a: Var, p: T) -> Result<Var> {
        let value = self.value(a).map(|x| x.powf(p)).ensure_finite("pow")?;
        Ok(self.push(Op::Pow(a, p), value, &[a]))
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        self.push(Op::Sum(a), value, &[a])
    }

    pub fn masked_sse(&mut self, pred: Var, target: &Matrix<T>, mask: &Matrix<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() || p.shape() != mask.shape() {
            return Err(Error::Dimension {
                op: "masked_sse",
                left: p.shape(),
                right: if p.shape() != target.shape() {
                    target.shape()
                } else {
                    mask.shape()
                },
            });
        }
        let total: T = p
            .data()
            .iter()
            .zip(target.data())
            .zip(mask.data())
            .map(|((&a, &b), &m)| m * (a - b) * (a - b))
            .sum();
        let op = Op::MaskedSse {
            pred,
            target: target.clone(),
            mask: mask.clone(),
        };
        Ok(self.push(op, Matrix::filled(1, 1, total), &[pred]))
    }

    /// `Σ_i w_i · terms[i]`, with `w` the row-major entries of `weights`.
    pub fn combine(&mut self, weights: Var, terms: &[Var]) -> Result<Var> {
        let w = self.value(weights);
        if w.data().len() != terms.len() || terms.is_empty() {
            return Err(Error::Dimension {
                op: "combine",
                left: w.shape(),
                right: (terms.len(), 1),
            });
        }
        let shape = self.shape(terms[0]);
        let mut value = Matrix::zeros(shape.0, shape.1);
        for (&wi, &t) in w.data().iter().zip(terms) {
            value.axpy(wi, self.value(t))?;
        }
        let mut inputs = vec![weights];
        inputs.extend_from_slice(terms);
        Ok(self.push(
            Op::Combine {
                weights,
                terms: terms.to_vec(),
            },
            value,
            &inputs,
        ))
    }

    fn accumulate(&mut self, v: Var, g: Matrix<T>) -> Result<()> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Reverse sweep from a scalar node. Previous gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Matrix::filled(1, 1, T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.needs(a) {
                        let ga = g.matmul_t(self.value(b))?;
                        self.accumulate(a, ga)?;
                    }
                    if self.needs(b) {
                        let gb = self.value(a).t_matmul(&g)?;
                        self.accumulate(b, gb)?;
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(a, g.clone())?;
                    self.accumulate(b, g.clone())?;
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, g.clone())?;
                    self.accumulate(b, g.scale(-T::one()))?;
                }
                Op::Scale(a, c) => self.accumulate(a, g.scale(c))?,
                Op::Hadamard(a, b) => {
                    if self.needs(a) {
                        let ga = g.hadamard(self.value(b))?;
                        self.accumulate(a, ga)?;
                    }
                    if self.needs(b) {
                        let gb = g.hadamard(self.value(a))?;
                        self.accumulate(b, gb)?;
                    }
                }
                Op::Transpose(a) => self.accumulate(a, g.transpose())?,
                Op::RowSoftmax(a) => {
                    let y = &self.nodes[idx].value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: T = g.row(i).iter().zip(y.row(i)).map(|(&gi, &yi)| gi * yi).sum();
                        for (j, out) in ga.row_mut(i).iter_mut().enumerate() {
                            *out = y.get(i, j) * (g.get(i, j) - dot);
                        }
                    }
                    self.accumulate(a, ga)?;
                }
                Op::Tanh(a) => {
                    let ga = self.nodes[idx]
                        .value
                        .zip_with(&g, "tanh'", |y, gi| (T::one() - y * y) * gi)?;
                    self.accumulate(a, ga)?;
                }
                Op::Relu(a) => {
                    let ga = self.value(a).zip_with(&g, "relu'", |x, gi| {
                        if x > T::zero() {
                            gi
                        } else {
                            T::zero()
                        }
                    })?;
                    self.accumulate(a, ga)?;
                }
                Op::Sigmoid(a) => {
                    let ga = self.nodes[idx]
                        .value
                        .zip_with(&g, "sigmoid'", |y, gi| y * (T::one() - y) * gi)?;
                    self.accumulate(a, ga)?;
                }
                Op::Pow(a, p) => {
                    let ga = self
                        .value(a)
                        .zip_with(&g, "pow'", |x, gi| p * x.powf(p - T::one()) * gi)?;
                    self.accumulate(a, ga)?;
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(a);
                    self.accumulate(a, Matrix::filled(r, c, g.get(0, 0)))?;
                }
                Op::MaskedSse { pred, target, mask } => {
                    let two_g = T::lit(2.0) * g.get(0, 0);
                    let p = self.value(pred);
                    let data = p
                        .data()
                        .iter()
                        .zip(target.data())
                        .zip(mask.data())
                        .map(|((&a, &b), &m)| two_g * m * (a - b))
                        .collect();
                    let gp = Matrix::new(p.rows(), p.cols(), data)?;
                    self.accumulate(pred, gp)?;
                }
                Op::Combine { weights, terms } => {
                    if self.needs(weights) {
                        let (r, c) = self.shape(weights);
                        let mut gw = Vec::with_capacity(terms.len());
                        for &t in &terms {
                            gw.push(g.dot(self.value(t))?);
                        }
                        self.accumulate(weights, Matrix::new(r, c, gw)?)?;
                    }
                    let w = self.value(weights).data().to_vec();
                    for (&t, wi) in terms.iter().zip(w) {
                        if self.needs(t) {
                            self.accumulate(t, g.scale(wi))?;
                        }
                    }
                }
            }
            self.grads[idx] = Some(g);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, stream};

    type M = Matrix<f64>;

    /// Central differences of `f` with respect to every entry of `x`.
    fn finite_diff(x: &M, h: f64, f: impl Fn(&M) -> f64) -> M {
        let mut g = M::zeros(x.rows(), x.cols());
        for k in 0..x.data().len() {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus.data_mut()[k] += h;
            minus.data_mut()[k] -= h;
            g.data_mut()[k] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        g
    }

    fn assert_grad_close(analytic: &M, numeric: &M) {
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            let tol = 1e-4 * a.abs().max(n.abs()) + 1e-6;
            assert!((a - n).abs() <= tol, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn quadratic_gradient() {
        let mut t = Tape::new();
        let x = t.param(M::column_vector(&[1.0, 2.0]));
        let xt = t.transpose(x);
        let loss = t.matmul(xt, x).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut t = Tape::new();
        let w = t.param(M::filled(2, 2, 3.0));
        let c = t.constant(M::filled(1, 1, 5.0));
        t.backward(c).unwrap();
        assert!(t.grad(w).is_none());
        // Reaches `w` only through a zero multiplier.
        let s = t.sum(w);
        let z = t.scale(s, 0.0);
        t.backward(z).unwrap();
        assert_eq!(t.grad(w).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn squared_norm_gradient_is_twice_w() {
        let w0: M = standard_normal(3, 4, &mut stream(2));
        let mut t = Tape::new();
        let w = t.param(w0.clone());
        let sq = t.hadamard(w, w).unwrap();
        let loss = t.sum(sq);
        t.backward(loss).unwrap();
        assert!(t.grad(w).unwrap().max_abs_diff(&w0.scale(2.0)).unwrap() < 1e-15);
        let first = t.grad(w).unwrap().clone();
        t.zero_grads();
        assert!(t.grad(w).is_none());
        t.backward(loss).unwrap();
        assert_eq!(t.grad(w).unwrap(), &first);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let w = t.param(M::zeros(2, 2));
        assert!(matches!(t.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_errors_surface_at_build_time() {
        let mut t = Tape::new();
        let a = t.constant(M::zeros(2, 3));
        let b = t.constant(M::zeros(2, 3));
        assert!(t.matmul(a, b).is_err());
        assert!(t.masked_sse(a, &M::zeros(3, 2), &M::zeros(2, 3)).is_err());
        let w = t.constant(M::zeros(1, 3));
        assert!(t.combine(w, &[a, b]).is_err());
    }

    #[test]
    fn softmax_rows_are_stochastic() {
        let x: M = standard_normal(5, 7, &mut stream(3)).scale(10.0);
        let mut t = Tape::new();
        let v = t.constant(x);
        let s = t.row_softmax(v);
        for i in 0..5 {
            assert!((t.value(s).row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    /// Builds a composite expression touching every primitive and returns
    /// the scalar loss.
    fn composite(t: &mut Tape<f64>, p: &[Var], target: &M, mask: &M) -> Var {
        let (a, b, c, theta) = (p[0], p[1], p[2], p[3]);
        let ab = t.matmul(a, b).unwrap();
        let th = t.tanh(ab);
        let sm = t.row_softmax(th);
        let bt = t.transpose(b);
        let sig = t.sigmoid(bt);
        let prod = t.matmul(sm, sig).unwrap();
        let r = t.relu(prod);
        let had = t.hadamard(r, c).unwrap();
        let sc = t.scale(had, 0.7);
        let diff = t.sub(sc, c).unwrap();
        let sum = t.add(diff, a).unwrap();
        let sq = t.hadamard(c, c).unwrap();
        let shifted = t.constant(M::filled(3, 3, 1.0));
        let pos = t.add(sq, shifted).unwrap();
        let root = t.pow(pos, -0.5).unwrap();
        let mixed = t.combine(theta, &[sum, root]).unwrap();
        let sse = t.masked_sse(mixed, target, mask).unwrap();
        let extra = t.sum(root);
        t.add(sse, extra).unwrap()
    }

    #[test]
    fn composite_matches_finite_differences() {
        let mut rng = stream(21);
        for trial in 0..10 {
            let init: Vec<M> = vec![
                standard_normal(3, 3, &mut rng),
                standard_normal(3, 3, &mut rng),
                standard_normal(3, 3, &mut rng),
                standard_normal(1, 2, &mut rng),
            ];
            let target: M = standard_normal(3, 3, &mut rng);
            let mask = M::from_fn(3, 3, |i, j| ((i + j + trial) % 2) as f64);

            let mut t = Tape::new();
            let vars: Vec<Var> = init.iter().map(|m| t.param(m.clone())).collect();
            let loss = composite(&mut t, &vars, &target, &mask);
            t.backward(loss).unwrap();

            for k in 0..init.len() {
                let numeric = finite_diff(&init[k], 1e-5, |x| {
                    let mut t = Tape::new();
                    let vars: Vec<Var> = init
                        .iter()
                        .enumerate()
                        .map(|(j, m)| t.param(if j == k { x.clone() } else { m.clone() }))
                        .collect();
                    let l = composite(&mut t, &vars, &target, &mask);
                    t.value(l)[(0, 0)]
                });
                assert_grad_close(t.grad(vars[k]).unwrap(), &numeric);
            }
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(M::filled(2, 2, 1.0));
        let w = t.param(M::filled(2, 2, 2.0));
        let p = t.matmul(c, w).unwrap();
        let l = t.sum(p);
        t.backward(l).unwrap();
        assert!(t.grad(c).is_none());
        assert!(t.grad(w).is_some());
        assert!(t.is_trainable(w) && !t.is_trainable(c));
    }
}
