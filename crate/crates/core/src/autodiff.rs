//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node in creation order, which is
//! already a topological order. [`Graph::backward`] walks the tape once in
//! reverse and returns a fresh [`Gradients`] map, so calling it repeatedly on
//! the same graph never accumulates.
//!
//! Leaves created with [`Graph::param`] require gradients; leaves created with
//! [`Graph::constant`] do not. Sampling noise always enters as a constant.
//!
//! ```
//! use ssbnn::autodiff::Graph;
//! use ssbnn::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), Some(6.0));
//! ```

use crate::error::{Error, Result};
use crate::tensor::{broadcast_shapes, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Abs(Var),
    L2Norm(Var),
    Broadcast(Var),
    Reshape(Var),
    Transpose(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The operation kinds supported by [`Graph::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    Add,
    Mul,
    Sub,
    Neg,
    Sum,
    Mean,
    Sigmoid,
    Softplus,
    Relu,
    Log,
    Exp,
    Abs,
    L2Norm,
    Transpose,
}

impl OpKind {
    pub const ALL: [OpKind; 15] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Mul,
        OpKind::Sub,
        OpKind::Neg,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Sigmoid,
        OpKind::Softplus,
        OpKind::Relu,
        OpKind::Log,
        OpKind::Exp,
        OpKind::Abs,
        OpKind::L2Norm,
        OpKind::Transpose,
    ];

    pub fn arity(self) -> usize {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::Mul | OpKind::Sub => 2,
            _ => 1,
        }
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if it does not require gradients or is
    /// unreachable from the root.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, with zeros standing in for an absent gradient.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A single-use computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a fixed input (data, sampling noise).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(
        &mut self,
        value: Tensor,
        op: Op,
        parents: &[Var],
        name: &'static str,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    /// Dispatch by [`OpKind`]; binary kinds read `inputs[0]` and `inputs[1]`.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != kind.arity() {
            return Err(Error::Domain(format!(
                "{kind:?} takes {} inputs, got {}",
                kind.arity(),
                inputs.len()
            )));
        }
        let a = inputs[0];
        match kind {
            OpKind::MatMul => self.matmul(a, inputs[1]),
            OpKind::Add => self.add(a, inputs[1]),
            OpKind::Mul => self.mul(a, inputs[1]),
            OpKind::Sub => self.sub(a, inputs[1]),
            OpKind::Neg => self.neg(a),
            OpKind::Sum => self.sum(a),
            OpKind::Mean => self.mean(a),
            OpKind::Sigmoid => self.sigmoid(a),
            OpKind::Softplus => self.softplus(a),
            OpKind::Relu => self.relu(a),
            OpKind::Log => self.log(a),
            OpKind::Exp => self.exp(a),
            OpKind::Abs => self.abs(a),
            OpKind::L2Norm => self.l2norm(a),
            OpKind::Transpose => self.transpose(a),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.record(value, Op::MatMul(a, b), &[a, b], "matmul")
    }

    fn broadcast_binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let shape = broadcast_shapes(va.shape(), vb.shape())?;
        let value = if va.shape() == vb.shape() {
            va.zip_map(vb, f)?
        } else {
            va.broadcast_to(&shape)?
                .zip_map(&vb.broadcast_to(&shape)?, f)?
        };
        self.record(value, op, &[a, b], name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| -x);
        self.record(value, Op::Neg(a), &[a], "neg")
    }

    /// Multiply by a fixed scalar.
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * factor);
        self.record(value, Op::Scale(a, factor), &[a], "scale")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.record(value, Op::Sum(a), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::Domain("mean of an empty tensor".into()));
        }
        let value = Tensor::scalar(v.sum() / v.len() as f64);
        self.record(value, Op::Mean(a), &[a], "mean")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.record(value, Op::Sigmoid(a), &[a], "sigmoid")
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(softplus);
        self.record(value, Op::Softplus(a), &[a], "softplus")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.record(value, Op::Relu(a), &[a], "relu")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if let Some(bad) = v.data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        let value = v.map(f64::ln);
        self.record(value, Op::Log(a), &[a], "log")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        self.record(value, Op::Exp(a), &[a], "exp")
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::abs);
        self.record(value, Op::Abs(a), &[a], "abs")
    }

    /// Euclidean norm over all elements, as a scalar.
    pub fn l2norm(&mut self, a: Var) -> Result<Var> {
        let norm = self
            .value(a)
            .data()
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        self.record(Tensor::scalar(norm), Op::L2Norm(a), &[a], "l2norm")
    }

    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).broadcast_to(shape)?;
        self.record(value, Op::Broadcast(a), &[a], "broadcast")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        self.record(value, Op::Reshape(a), &[a], "reshape")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        self.record(value, Op::Transpose(a), &[a], "transpose")
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::ones(root_value.shape()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut grads)?;
            grads[idx] = Some(upstream);
        }

        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, up: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &node.value;
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(a) {
                    let ga = up.matmul_nt(self.value(b))?;
                    accumulate(grads, a, ga)?;
                }
                if self.requires_grad(b) {
                    let gb = self.value(a).matmul_tn(up)?;
                    accumulate(grads, b, gb)?;
                }
            }
            Op::Add(a, b) => {
                self.send_reduced(grads, a, up.clone())?;
                self.send_reduced(grads, b, up.clone())?;
            }
            Op::Sub(a, b) => {
                self.send_reduced(grads, a, up.clone())?;
                self.send_reduced(grads, b, up.map(|g| -g))?;
            }
            Op::Mul(a, b) => {
                let shape = out.shape();
                if self.requires_grad(a) {
                    let vb = self.value(b).broadcast_to(shape)?;
                    self.send_reduced(grads, a, up.zip_map(&vb, |g, y| g * y)?)?;
                }
                if self.requires_grad(b) {
                    let va = self.value(a).broadcast_to(shape)?;
                    self.send_reduced(grads, b, up.zip_map(&va, |g, x| g * x)?)?;
                }
            }
            Op::Neg(a) => accumulate(grads, a, up.map(|g| -g))?,
            Op::Scale(a, k) => accumulate(grads, a, up.map(|g| g * k))?,
            Op::Sum(a) => {
                let g = up.data()[0];
                accumulate(grads, a, Tensor::full(self.value(a).shape(), g))?;
            }
            Op::Mean(a) => {
                let v = self.value(a);
                let g = up.data()[0] / v.len() as f64;
                accumulate(grads, a, Tensor::full(v.shape(), g))?;
            }
            Op::Sigmoid(a) => {
                accumulate(grads, a, up.zip_map(out, |g, s| g * s * (1.0 - s))?)?;
            }
            Op::Softplus(a) => {
                let x = self.value(a);
                accumulate(grads, a, up.zip_map(x, |g, x| g * sigmoid(x))?)?;
            }
            Op::Relu(a) => {
                let x = self.value(a);
                accumulate(
                    grads,
                    a,
                    up.zip_map(x, |g, x| if x > 0.0 { g } else { 0.0 })?,
                )?;
            }
            Op::Log(a) => {
                let x = self.value(a);
                accumulate(grads, a, up.zip_map(x, |g, x| g / x)?)?;
            }
            Op::Exp(a) => accumulate(grads, a, up.zip_map(out, |g, e| g * e)?)?,
            Op::Abs(a) => {
                let x = self.value(a);
                let sign = |x: f64| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                accumulate(grads, a, up.zip_map(x, |g, x| g * sign(x))?)?;
            }
            Op::L2Norm(a) => {
                let norm = out.data()[0];
                let g = up.data()[0];
                let x = self.value(a);
                let grad = if norm > 0.0 {
                    x.map(|x| g * x / norm)
                } else {
                    Tensor::zeros(x.shape())
                };
                accumulate(grads, a, grad)?;
            }
            Op::Broadcast(a) => self.send_reduced(grads, a, up.clone())?,
            Op::Reshape(a) => {
                accumulate(grads, a, up.reshape(self.value(a).shape())?)?;
            }
            Op::Transpose(a) => accumulate(grads, a, up.transpose()?)?,
        }
        Ok(())
    }

    fn send_reduced(&self, grads: &mut [Option<Tensor>], to: Var, grad: Tensor) -> Result<()> {
        if !self.requires_grad(to) {
            return Ok(());
        }
        let reduced = grad.reduce_to(self.value(to).shape())?;
        accumulate(grads, to, reduced)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], to: Var, grad: Tensor) -> Result<()> {
    match &mut grads[to.0] {
        Some(existing) => {
            for (e, g) in existing.data_mut().iter_mut().zip(grad.data()) {
                *e += g;
            }
        }
        slot @ None => *slot = Some(grad),
    }
    Ok(())
}

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error per parameter tensor.
    pub max_rel_error: Vec<f64>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    pub tol: f64,
    pub passed: bool,
}

/// Relative error with a small floor on the denominator, so that gradients
/// that are exactly or nearly zero are compared in absolute terms.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-2;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compare [`Graph::backward`] against central finite differences.
///
/// `f` builds a scalar from parameter leaves and must be deterministic; any
/// sampling noise it uses has to be drawn once outside and captured.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::Domain(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().cloned().map(|t| g.param(t)).collect();
        let root = f(&mut g, &vars)?;
        g.value(root)
            .item()
            .ok_or_else(|| Error::NonScalarRoot(g.value(root).shape().to_vec()))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().cloned().map(|t| g.param(t)).collect();
    let root = f(&mut g, &vars)?;
    let grads = g.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut max_rel_error = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut num = Tensor::zeros(params[p].shape());
        let mut worst: f64 = 0.0;
        for i in 0..params[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work[p].data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work[p].data_mut()[i] = orig;
            let d = (up - down) / (2.0 * step);
            num.data_mut()[i] = d;
            worst = worst.max(relative_error(analytic[p].data()[i], d));
        }
        numeric.push(num);
        max_rel_error.push(worst);
    }
    let passed = max_rel_error.iter().all(|&e| e <= tol);
    Ok(GradCheckReport {
        max_rel_error,
        analytic,
        numeric,
        tol,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn sigmoid_and_softplus_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let s = g.sigmoid(x).unwrap();
        assert_eq!(g.value(s).item(), Some(0.5));
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), Some(0.25));

        let sp = g.softplus(x).unwrap();
        // ln(1 + e^0) = ln 2
        assert!((g.value(sp).item().unwrap() - 0.693_147_180_559_945_3).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
    }

    #[test]
    fn identity_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eye = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let a = random_tensor(&mut rng, &[3, 4], -2.0, 2.0);
        let mut g = Graph::new();
        let i = g.constant(eye);
        let av = g.constant(a.clone());
        let out = g.matmul(i, av).unwrap();
        assert_eq!(g.value(out), &a);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_tensor(&mut rng, &[2, 5], -2.0, 2.0);
        let mut g = Graph::new();
        let x = g.param(t);
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let y = g.exp(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1.0, 0.0]));
        assert!(matches!(g.log(x), Err(Error::Domain(_))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::ShapeMismatch { .. })));
        let c = g.constant(Tensor::zeros(&[4]));
        assert!(matches!(g.add(a, c), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn non_finite_forward_is_hard_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(1000.0));
        assert!(matches!(g.exp(x), Err(Error::NonFinite("exp"))));
    }

    #[test]
    fn backward_twice_is_identical() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![0.3, -1.2, 2.0]));
        let y = g.sigmoid(x).unwrap();
        let z = g.mul(y, x).unwrap();
        let s = g.sum(z).unwrap();
        let first = g.backward(s).unwrap();
        let second = g.backward(s).unwrap();
        assert_eq!(first.get(x), second.get(x));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), Some(5.0));
    }

    #[test]
    fn grad_check_square() {
        let report =
            grad_check(|g, p| g.mul(p[0], p[0]), &[Tensor::scalar(3.0)], 1e-4, 1e-6).unwrap();
        assert_eq!(report.analytic[0].item(), Some(6.0));
        assert!((report.numeric[0].item().unwrap() - 6.0).abs() < 1e-6);
        assert!(report.passed);
    }

    #[test]
    fn grad_check_constant() {
        let report = grad_check(
            |g, _p| Ok(g.constant(Tensor::scalar(4.0))),
            &[Tensor::from_vec(vec![1.0, 2.0])],
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(report.analytic[0].data().iter().all(|&v| v == 0.0));
        assert!(report.numeric[0].data().iter().all(|&v| v == 0.0));
        assert!(report.passed);
    }

    #[test]
    fn grad_check_rejects_bad_step() {
        assert!(grad_check(|g, p| g.sum(p[0]), &[Tensor::scalar(1.0)], 0.0, 1e-4).is_err());
    }
}
