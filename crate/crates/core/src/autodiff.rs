//! Define-by-run reverse-mode differentiation over dense arrays.
//!
//! A [`Tape`] records every primitive as it is evaluated. Operands always
//! precede their results on the tape, so [`Tape::backward`] is a single
//! reverse sweep. The tape is rebuilt for every batch.

use crate::array::{matmul, matmul_a_bt, matmul_at_b, Array};
use crate::error::{Error, Result};

/// Reference to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient reversal: identity forward, `-lambda` times the incoming gradient
/// backward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrlSpec {
    lambda: f64,
}

impl GrlSpec {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "gradient reversal scale must be a finite value >= 0, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Dense { input: Var, weight: Var, bias: Var },
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Grl { input: Var, lambda: f64 },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    MultinomialNll { logits: Var, targets: Var },
    KlGaussian { mu: Var, logsigma: Var },
    WeightedCe { logits: Var, labels: Vec<usize>, weights: Vec<f64> },
    Mse { pred: Var, target: Var },
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Array {
        &self.nodes[var.0].value
    }

    /// A differentiable input (typically a parameter).
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Data that no gradient is requested for.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// `input · weight + bias`, with the bias broadcast over rows.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let (m, k) = x.expect_matrix()?;
        let (wk, n) = w.expect_matrix()?;
        if wk != k || b.len() != n {
            return Err(Error::Dimension(format!(
                "dense: input {:?}, weights {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            )));
        }
        let mut out = matmul(x.data(), w.data(), m, k, n);
        for row in out.chunks_mut(n.max(1)) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let value = Array::matrix(m, n, out)?;
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(value, Op::Dense { input, weight, bias }, rg))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        let rg = self.needs(x);
        self.push(value, Op::Tanh(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.needs(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.needs(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        let rg = self.needs(x);
        self.push(value, Op::Exp(x), rg)
    }

    pub fn grl(&mut self, x: Var, spec: GrlSpec) -> Var {
        let value = self.value(x).clone();
        let rg = self.needs(x);
        self.push(
            value,
            Op::Grl {
                input: x,
                lambda: spec.lambda,
            },
            rg,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.needs(x);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Array::scalar(self.value(x).sum());
        let rg = self.needs(x);
        self.push(value, Op::Sum(x), rg)
    }

    /// Batch-mean multinomial negative log-likelihood of `targets` under
    /// `softmax(logits)`.
    pub fn multinomial_nll(&mut self, logits: Var, targets: Var) -> Result<Var> {
        let l = self.value(logits);
        let t = self.value(targets);
        l.expect_same_shape(t)?;
        let (rows, cols) = l.expect_matrix()?;
        let mut total = 0.0;
        for r in 0..rows {
            let lr = &l.data()[r * cols..(r + 1) * cols];
            let tr = &t.data()[r * cols..(r + 1) * cols];
            let lse = log_sum_exp(lr);
            for (lv, tv) in lr.iter().zip(tr) {
                if *tv != 0.0 {
                    total -= tv * (lv - lse);
                }
            }
        }
        let value = Array::scalar(if rows == 0 { 0.0 } else { total / rows as f64 });
        let rg = self.needs(logits);
        Ok(self.push(value, Op::MultinomialNll { logits, targets }, rg))
    }

    /// Batch-mean KL divergence of `N(mu, exp(logsigma)^2)` from `N(0, I)`.
    pub fn kl_gaussian(&mut self, mu: Var, logsigma: Var) -> Result<Var> {
        let m = self.value(mu);
        let s = self.value(logsigma);
        m.expect_same_shape(s)?;
        let rows = m.rows();
        let total: f64 = m
            .data()
            .iter()
            .zip(s.data())
            .map(|(&mv, &sv)| 0.5 * ((2.0 * sv).exp() + mv * mv - 1.0 - 2.0 * sv))
            .sum();
        let value = Array::scalar(if rows == 0 { 0.0 } else { total / rows as f64 });
        let rg = self.needs(mu) || self.needs(logsigma);
        Ok(self.push(value, Op::KlGaussian { mu, logsigma }, rg))
    }

    /// Class-weighted cross-entropy, normalized by the total weight of the
    /// batch's labels.
    pub fn weighted_ce(&mut self, logits: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
        let l = self.value(logits);
        let (rows, classes) = l.expect_matrix()?;
        if labels.len() != rows {
            return Err(Error::Dimension(format!(
                "weighted_ce: {} labels for {} rows",
                labels.len(),
                rows
            )));
        }
        if weights.len() != classes {
            return Err(Error::Dimension(format!(
                "weighted_ce: {} class weights for {} classes",
                weights.len(),
                classes
            )));
        }
        if let Some(c) = weights.iter().position(|w| !(*w > 0.0)) {
            return Err(Error::Config(format!("class weight {c} must be positive")));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(Error::Data(format!(
                    "row {r}: label {y} outside [0, {classes})"
                )));
            }
            let lr = l.row(r);
            let nll = log_sum_exp(lr) - lr[y];
            num += weights[y] * nll;
            den += weights[y];
        }
        let value = Array::scalar(if den > 0.0 { num / den } else { 0.0 });
        let rg = self.needs(logits);
        Ok(self.push(
            value,
            Op::WeightedCe {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let p = self.value(pred);
        let t = self.value(target);
        p.expect_same_shape(t)?;
        let n = p.len();
        let total: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let value = Array::scalar(if n == 0 { 0.0 } else { total / n as f64 });
        let rg = self.needs(pred) || self.needs(target);
        Ok(self.push(value, Op::Mse { pred, target }, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array::filled(self.value(loss).shape(), 1.0));
        let mut visited = 0;
        for i in (0..=loss.0).rev() {
            visited += 1;
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let shapes = self.nodes[..=loss.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients {
            grads,
            shapes,
            visited,
        })
    }

    fn propagate(&self, node: &Node, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (m, k) = x.expect_matrix()?;
                let n = w.cols();
                if self.needs(*weight) {
                    let dw = matmul_at_b(x.data(), g.data(), m, k, n);
                    self.accumulate(grads, *weight, Array::matrix(k, n, dw)?);
                }
                if self.needs(*bias) {
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n.max(1)) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    self.accumulate(grads, *bias, Array::new(shape, db)?);
                }
                if self.needs(*input) {
                    let dx = matmul_a_bt(g.data(), w.data(), m, n, k);
                    self.accumulate(grads, *input, Array::matrix(m, k, dx)?);
                }
            }
            Op::Tanh(x) => {
                let d = node.value.zip_map(g, |y, gv| gv * (1.0 - y * y))?;
                self.accumulate(grads, *x, d);
            }
            Op::Relu(x) => {
                let d = node.value.zip_map(g, |y, gv| if y > 0.0 { gv } else { 0.0 })?;
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = node.value.zip_map(g, |y, gv| gv * y * (1.0 - y))?;
                self.accumulate(grads, *x, d);
            }
            Op::Exp(x) => {
                let d = node.value.zip_map(g, |y, gv| gv * y)?;
                self.accumulate(grads, *x, d);
            }
            Op::Grl { input, lambda } => {
                let factor = -*lambda;
                self.accumulate(grads, *input, g.map(|v| factor * v));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let d = g.zip_map(self.value(*b), |gv, bv| gv * bv)?;
                    self.accumulate(grads, *a, d);
                }
                if self.needs(*b) {
                    let d = g.zip_map(self.value(*a), |gv, av| gv * av)?;
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale(x, factor) => {
                let f = *factor;
                self.accumulate(grads, *x, g.map(|v| v * f));
            }
            Op::Sum(x) => {
                let gv = g.item();
                self.accumulate(grads, *x, Array::filled(self.value(*x).shape(), gv));
            }
            Op::MultinomialNll { logits, targets } => {
                let l = self.value(*logits);
                let t = self.value(*targets);
                let (rows, cols) = l.expect_matrix()?;
                let scale = g.item() / rows.max(1) as f64;
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    let lr = l.row(r);
                    let tr = t.row(r);
                    let mass: f64 = tr.iter().sum();
                    if mass == 0.0 {
                        continue;
                    }
                    let lse = log_sum_exp(lr);
                    for c in 0..cols {
                        let p = (lr[c] - lse).exp();
                        d[r * cols + c] = scale * (p * mass - tr[c]);
                    }
                }
                self.accumulate(grads, *logits, Array::matrix(rows, cols, d)?);
            }
            Op::KlGaussian { mu, logsigma } => {
                let rows = self.value(*mu).rows().max(1) as f64;
                let scale = g.item() / rows;
                if self.needs(*mu) {
                    let d = self.value(*mu).map(|m| scale * m);
                    self.accumulate(grads, *mu, d);
                }
                if self.needs(*logsigma) {
                    let d = self
                        .value(*logsigma)
                        .map(|s| scale * ((2.0 * s).exp() - 1.0));
                    self.accumulate(grads, *logsigma, d);
                }
            }
            Op::WeightedCe {
                logits,
                labels,
                weights,
            } => {
                let l = self.value(*logits);
                let (rows, classes) = l.expect_matrix()?;
                let den: f64 = labels.iter().map(|&y| weights[y]).sum();
                let mut d = vec![0.0; rows * classes];
                if den > 0.0 {
                    let scale = g.item() / den;
                    for (r, &y) in labels.iter().enumerate() {
                        let lr = l.row(r);
                        let lse = log_sum_exp(lr);
                        let wr = weights[y] * scale;
                        for c in 0..classes {
                            let p = (lr[c] - lse).exp();
                            let ind = if c == y { 1.0 } else { 0.0 };
                            d[r * classes + c] = wr * (p - ind);
                        }
                    }
                }
                self.accumulate(grads, *logits, Array::matrix(rows, classes, d)?);
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let t = self.value(*target);
                let scale = 2.0 * g.item() / p.len().max(1) as f64;
                if self.needs(*pred) {
                    let d = p.zip_map(t, |a, b| scale * (a - b))?;
                    self.accumulate(grads, *pred, d);
                }
                if self.needs(*target) {
                    let d = p.zip_map(t, |a, b| scale * (b - a))?;
                    self.accumulate(grads, *target, d);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Array>], var: Var, d: Array) {
        if !self.needs(var) {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&d),
            slot @ None => *slot = Some(d),
        }
    }
}

/// Result of [`Tape::backward`]: `dLoss/dVar` for every recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
    shapes: Vec<Vec<usize>>,
    visited: usize,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when the loss does not depend on
    /// it.
    pub fn wrt(&self, var: Var) -> Array {
        match self.grads.get(var.0) {
            Some(Some(g)) => g.clone(),
            Some(None) => Array::zeros(&self.shapes[var.0]),
            None => panic!("variable {var:?} was recorded after the loss"),
        }
    }

    /// Like [`Gradients::wrt`] but moves the array out.
    pub fn take(&mut self, var: Var) -> Array {
        match self.grads.get_mut(var.0) {
            Some(slot) => slot
                .take()
                .unwrap_or_else(|| Array::zeros(&self.shapes[var.0])),
            None => panic!("variable {var:?} was recorded after the loss"),
        }
    }

    /// Number of tape entries the reverse sweep visited.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` records the function on a fresh tape given one leaf per entry of
/// `params`. Returns the largest `|a - b| / max(1e-8, |a| + |b|)` over all
/// coordinates.
pub fn finite_difference_check<F>(f: F, params: &[Array], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let eval = |values: &[Array]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(params)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Array> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let mut worst: f64 = 0.0;
    let mut coordinate = 0;
    let mut probe: Vec<Array> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for j in 0..param.len() {
            let orig = param.data()[j];
            probe[pi].data_mut()[j] = orig + eps;
            let (t_plus, _, o_plus) = eval(&probe)?;
            let f_plus = t_plus.value(o_plus).item();
            probe[pi].data_mut()[j] = orig - eps;
            let (t_minus, _, o_minus) = eval(&probe)?;
            let f_minus = t_minus.value(o_minus).item();
            probe[pi].data_mut()[j] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::FiniteDifference { coordinate });
            }
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[pi].data()[j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            coordinate += 1;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Array {
        Array::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn dense_identity_weights() {
        let mut t = Tape::new();
        let x = t.constant(m(&[&[1.0, 2.0]]));
        let w = t.leaf(m(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let b = t.leaf(Array::zeros(&[2]));
        let y = t.dense(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_hand_product() {
        let mut t = Tape::new();
        let x = t.constant(m(&[&[1.0, 1.0]]));
        let w = t.leaf(m(&[&[2.0], &[3.0]]));
        let b = t.leaf(Array::scalar(1.0));
        let y = t.dense(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[6.0]);
    }

    #[test]
    fn dense_empty_batch() {
        let mut t = Tape::new();
        let x = t.constant(Array::zeros(&[0, 3]));
        let w = t.leaf(Array::filled(&[3, 2], 1.0));
        let b = t.leaf(Array::zeros(&[2]));
        let y = t.dense(x, w, b).unwrap();
        assert_eq!(t.value(y).shape(), &[0, 2]);
    }

    #[test]
    fn dense_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let x = t.constant(Array::zeros(&[1, 3]));
        let w = t.leaf(Array::zeros(&[2, 2]));
        let b = t.leaf(Array::zeros(&[2]));
        let err = t.dense(x, w, b).unwrap_err().to_string();
        assert!(err.contains("[1, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn tanh_values_and_gradients() {
        let mut t = Tape::new();
        let x = t.leaf(Array::new(vec![2], vec![0.0, 100.0]).unwrap());
        let y = t.tanh(x);
        assert_eq!(t.value(y).data()[0], 0.0);
        let sat = t.value(y).data()[1];
        assert!(sat > 1.0 - 1e-12 && sat <= 1.0);
        let s = t.sum(y);
        let g = t.backward(s).unwrap().wrt(x);
        assert!((g.data()[0] - 1.0).abs() < 1e-12);
        assert!(g.data()[1].is_finite() && g.data()[1].abs() < 1e-12);
    }

    #[test]
    fn grl_forward_is_identity() {
        for lambda in [0.0, 1.0, 200.0, 800.0] {
            let mut t = Tape::new();
            let x = t.leaf(Array::new(vec![3], vec![1.0, -2.0, 3.0]).unwrap());
            let y = t.grl(x, GrlSpec::new(lambda).unwrap());
            assert_eq!(t.value(y).data(), &[1.0, -2.0, 3.0]);
        }
    }

    #[test]
    fn grl_backward_scales_by_negative_lambda() {
        let mut t = Tape::new();
        let x = t.leaf(Array::new(vec![2], vec![0.3, -0.7]).unwrap());
        let y = t.grl(x, GrlSpec::new(200.0).unwrap());
        let s = t.sum(y);
        let g = t.backward(s).unwrap().wrt(x);
        assert_eq!(g.data(), &[-200.0, -200.0]);

        let mut t = Tape::new();
        let x = t.leaf(Array::new(vec![2], vec![0.3, -0.7]).unwrap());
        let y = t.grl(x, GrlSpec::new(0.0).unwrap());
        let s = t.sum(y);
        let g = t.backward(s).unwrap().wrt(x);
        assert!(g.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn negative_lambda_rejected() {
        assert!(matches!(GrlSpec::new(-1.0), Err(Error::Config(_))));
        assert!(GrlSpec::new(f64::NAN).is_err());
    }

    #[test]
    fn backward_hand_example() {
        // loss = sum(x·W) with x=[1,1], W=[[1],[1]]
        let mut t = Tape::new();
        let x = t.constant(m(&[&[1.0, 1.0]]));
        let w = t.leaf(m(&[&[1.0], &[1.0]]));
        let b = t.leaf(Array::zeros(&[1]));
        let unused = t.leaf(Array::filled(&[3], 5.0));
        let y = t.dense(x, w, b).unwrap();
        let s = t.sum(y);
        let grads = t.backward(s).unwrap();
        assert_eq!(grads.wrt(w).data(), &[1.0, 1.0]);
        assert_eq!(grads.wrt(unused).data(), &[0.0, 0.0, 0.0]);
        assert_eq!(grads.visited(), s.index() + 1);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Array::zeros(&[2]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(Array::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap().wrt(x);
        assert_eq!(g.item(), 6.0);
    }

    #[test]
    fn finite_difference_quadratic_and_constant() {
        let quad = |t: &mut Tape, v: &[Var]| t.mul(v[0], v[0]);
        let err = finite_difference_check(quad, &[Array::scalar(3.0)], 1e-5).unwrap();
        assert!(err < 1e-7, "{err}");

        let constant = |t: &mut Tape, _v: &[Var]| Ok(t.constant(Array::scalar(2.0)));
        let err = finite_difference_check(constant, &[Array::scalar(3.0)], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn finite_difference_reports_non_finite_coordinate() {
        let f = |t: &mut Tape, v: &[Var]| {
            let e = t.exp(v[0]);
            let e2 = t.exp(e);
            let e3 = t.exp(e2);
            Ok(t.sum(e3))
        };
        // exp(exp(exp(x))) overflows just above this point.
        let edge = f64::MAX.ln().ln().ln() - 2e-6;
        let p = Array::new(vec![2], vec![0.0, edge]).unwrap();
        assert!(matches!(
            finite_difference_check(f, &[p], 1e-5),
            Err(Error::FiniteDifference { coordinate: 1 })
        ));
    }

    fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array> {
        proptest::collection::vec(-2.0f64..2.0, rows * cols)
            .prop_map(move |v| Array::matrix(rows, cols, v).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn primitive_gradients_match_finite_differences(
            x in small_matrix(3, 4),
            w in small_matrix(4, 2),
            b in small_matrix(1, 2),
            t_ in small_matrix(3, 2),
        ) {
            let b = Array::new(vec![2], b.into_data()).unwrap();
            let f = |t: &mut Tape, v: &[Var]| {
                let h = t.dense(v[0], v[1], v[2])?;
                let a = t.tanh(h);
                let s = t.sigmoid(a);
                let e = t.exp(s);
                let p = t.mul(e, v[3])?;
                let q = t.add(p, a)?;
                let r = t.scale(q, 0.7);
                let target = t.constant(Array::filled(&[3, 2], 0.25));
                let l1 = t.mse(r, target)?;
                let l2 = t.kl_gaussian(h, a)?;
                let l3 = t.weighted_ce(r, &[0, 1, 1], &[1.0, 2.5])?;
                let counts = t.constant(Array::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0])?);
                let l4 = t.multinomial_nll(q, counts)?;
                let s1 = t.add(l1, l2)?;
                let s2 = t.add(l3, l4)?;
                t.add(s1, s2)
            };
            let err = finite_difference_check(f, &[x, w, b, t_], 1e-5).unwrap();
            prop_assert!(err < 1e-4, "max relative error {}", err);
        }

        #[test]
        fn grl_backward_is_exact(lambda in 0.0f64..1000.0, g in -10.0f64..10.0) {
            let mut t = Tape::new();
            let x = t.leaf(Array::scalar(0.5));
            let y = t.grl(x, GrlSpec::new(lambda).unwrap());
            let z = t.scale(y, g);
            let grad = t.backward(z).unwrap().wrt(x);
            prop_assert_eq!(grad.item(), -lambda * g);
        }
    }
}
