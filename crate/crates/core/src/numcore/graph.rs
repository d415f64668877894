//! Reverse-mode tape. Nodes are appended in evaluation order, so walking
//! the node list backwards is a reverse topological order.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    /// Elementwise product with a constant (dropout masks).
    Mask(Var, Vec<f64>),
    /// Per-column constant scale; the shift does not enter the backward rule.
    ColAffine(Var, Vec<f64>),
    Gelu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    ConcatCols(Var, Var),
    BatchNorm {
        x: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    /// Scalar-valued function whose input gradient was computed with the
    /// value; used for fused losses.
    Reduce {
        input: Var,
        local_grad: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Batch statistics produced by a train-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n−1) variance, the quantity tracked by running statistics.
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}

pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data).expect("shape preserved");
        self.push(t, op)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a).map(f);
        self.push(t, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.value(a).matmul(self.value(b))?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    fn row_check(&self, op: &'static str, x: Var, row: Var) -> Result<usize> {
        let (sx, sr) = (self.value(x).shape(), self.value(row).shape());
        let cols = self.value(x).cols();
        if sx.len() != 2 || self.value(row).len() != cols {
            return Err(Error::Shape {
                op,
                left: sx.to_vec(),
                right: sr.to_vec(),
            });
        }
        Ok(cols)
    }

    /// `x[B×d] + row[d]`, broadcasting over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let cols = self.row_check("add_row", x, row)?;
        let r = self.value(row).data().to_vec();
        let mut t = self.value(x).clone();
        for (k, v) in t.data_mut().iter_mut().enumerate() {
            *v += r[k % cols];
        }
        Ok(self.push(t, Op::AddRow(x, row)))
    }

    /// `x[B×d] ⊙ row[d]`, broadcasting over rows.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let cols = self.row_check("mul_row", x, row)?;
        let r = self.value(row).data().to_vec();
        let mut t = self.value(x).clone();
        for (k, v) in t.data_mut().iter_mut().enumerate() {
            *v *= r[k % cols];
        }
        Ok(self.push(t, Op::MulRow(x, row)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::Shape {
                op: "mask",
                left: self.value(x).shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let mut t = self.value(x).clone();
        for (v, m) in t.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(self.push(t, Op::Mask(x, mask)))
    }

    /// `y[:, j] = x[:, j]·scale[j] + shift[j]` with constant scale and shift.
    pub fn col_affine(&mut self, x: Var, scale: Vec<f64>, shift: &[f64]) -> Result<Var> {
        let cols = self.value(x).cols();
        if scale.len() != cols || shift.len() != cols {
            return Err(Error::Shape {
                op: "col_affine",
                left: self.value(x).shape().to_vec(),
                right: vec![scale.len(), shift.len()],
            });
        }
        let mut t = self.value(x).clone();
        for (k, v) in t.data_mut().iter_mut().enumerate() {
            *v = *v * scale[k % cols] + shift[k % cols];
        }
        Ok(self.push(t, Op::ColAffine(x, scale)))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Gelu(x), gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x), softplus)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.rows() != tb.rows() {
            return Err(Error::Shape {
                op: "concat_cols",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (rows, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let t = Tensor::matrix(rows, ca + cb, data)?;
        Ok(self.push(t, Op::ConcatCols(a, b)))
    }

    /// Normalizes each column by its batch mean and biased variance, without
    /// the learnable affine part.
    pub fn batch_norm(&mut self, x: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let tx = self.value(x);
        let (b, d) = (tx.rows(), tx.cols());
        if tx.shape().len() != 2 || b < 2 {
            return Err(Error::Contract(format!(
                "train-mode batch norm needs at least 2 rows, got shape {:?}",
                tx.shape()
            )));
        }
        let data = tx.data();
        let mut mean = vec![0.0; d];
        for r in 0..b {
            for j in 0..d {
                mean[j] += data[r * d + j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= b as f64);
        let mut sq = vec![0.0; d];
        for r in 0..b {
            for j in 0..d {
                let c = data[r * d + j] - mean[j];
                sq[j] += c * c;
            }
        }
        let inv_std: Vec<f64> = sq.iter().map(|s| 1.0 / (s / b as f64 + eps).sqrt()).collect();
        let xhat: Vec<f64> = (0..b * d).map(|k| (data[k] - mean[k % d]) * inv_std[k % d]).collect();
        let stats = BatchStats {
            mean,
            var: sq.iter().map(|s| s / (b - 1) as f64).collect(),
        };
        let t = Tensor::matrix(b, d, xhat.clone())?;
        Ok((self.push(t, Op::BatchNorm { x, xhat, inv_std }), stats))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Records a scalar computed outside the tape from `input`, together with
    /// its gradient with respect to every element of `input`.
    pub fn reduce(&mut self, input: Var, value: f64, local_grad: Vec<f64>) -> Result<Var> {
        if local_grad.len() != self.value(input).len() {
            return Err(Error::Shape {
                op: "reduce",
                left: self.value(input).shape().to_vec(),
                right: vec![local_grad.len()],
            });
        }
        Ok(self.push(Tensor::scalar(value), Op::Reduce { input, local_grad }))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets,
    /// evaluated in the numerically stable logit form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != targets.len() || z.is_empty() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                left: self.value(logits).shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let n = z.len() as f64;
        let value = z.iter().zip(targets).map(|(&z, &t)| softplus(z) - t * z).sum::<f64>() / n;
        let grad = z.iter().zip(targets).map(|(&z, &t)| (sigmoid(z) - t) / n).collect();
        self.reduce(logits, value, grad)
    }

    /// Adjoints of `loss` with respect to every node. Nodes `loss` does not
    /// depend on receive zero adjoints.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(up) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let g = up.data();
            let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, tb.data(), true, &mut ga, 0.0);
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g, false, &mut gb, 0.0);
                    acc(*a, Tensor::new(ta.shape().to_vec(), ga)?);
                    acc(*b, Tensor::new(tb.shape().to_vec(), gb)?);
                }
                Op::Add(a, b) => {
                    acc(*a, up.clone());
                    acc(*b, up.clone());
                }
                Op::Sub(a, b) => {
                    acc(*a, up.clone());
                    acc(*b, up.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    acc(*a, zip_with(&up, tb, |u, y| u * y));
                    acc(*b, zip_with(&up, ta, |u, x| u * x));
                }
                Op::AddRow(x, row) => {
                    let cols = node.value.cols();
                    let mut gr = vec![0.0; cols];
                    for (k, u) in g.iter().enumerate() {
                        gr[k % cols] += u;
                    }
                    acc(*x, up.clone());
                    acc(*row, Tensor::new(self.value(*row).shape().to_vec(), gr)?);
                }
                Op::MulRow(x, row) => {
                    let cols = node.value.cols();
                    let (tx, tr) = (self.value(*x), self.value(*row).data());
                    let mut gr = vec![0.0; cols];
                    let mut gx = vec![0.0; g.len()];
                    for (k, u) in g.iter().enumerate() {
                        gr[k % cols] += u * tx.data()[k];
                        gx[k] = u * tr[k % cols];
                    }
                    acc(*x, Tensor::new(tx.shape().to_vec(), gx)?);
                    acc(*row, Tensor::new(self.value(*row).shape().to_vec(), gr)?);
                }
                Op::Scale(x, c) => acc(*x, up.map(|u| u * c)),
                Op::Mask(x, mask) => {
                    let data = g.iter().zip(mask).map(|(u, m)| u * m).collect();
                    acc(*x, Tensor::new(up.shape().to_vec(), data)?);
                }
                Op::ColAffine(x, scale) => {
                    let cols = scale.len();
                    let data = g.iter().enumerate().map(|(k, u)| u * scale[k % cols]).collect();
                    acc(*x, Tensor::new(up.shape().to_vec(), data)?);
                }
                Op::Gelu(x) => acc(*x, zip_with(&up, self.value(*x), |u, v| u * gelu_grad(v))),
                Op::Sigmoid(x) => acc(*x, zip_with(&up, &node.value, |u, s| u * s * (1.0 - s))),
                Op::Softplus(x) => acc(*x, zip_with(&up, self.value(*x), |u, v| u * sigmoid(v))),
                Op::Abs(x) => acc(*x, zip_with(&up, self.value(*x), |u, v| u * sign(v))),
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                    let rows = node.value.rows();
                    let mut ga = Vec::with_capacity(rows * ca);
                    let mut gb = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        let row = up.row(r);
                        ga.extend_from_slice(&row[..ca]);
                        gb.extend_from_slice(&row[ca..]);
                    }
                    acc(*a, Tensor::matrix(rows, ca, ga)?);
                    acc(*b, Tensor::matrix(rows, cb, gb)?);
                }
                Op::BatchNorm { x, xhat, inv_std } => {
                    let (b, d) = (node.value.rows(), node.value.cols());
                    let mut sum_g = vec![0.0; d];
                    let mut sum_gx = vec![0.0; d];
                    for k in 0..b * d {
                        sum_g[k % d] += g[k];
                        sum_gx[k % d] += g[k] * xhat[k];
                    }
                    let bf = b as f64;
                    let data = (0..b * d)
                        .map(|k| {
                            let j = k % d;
                            inv_std[j] / bf * (bf * g[k] - sum_g[j] - xhat[k] * sum_gx[j])
                        })
                        .collect();
                    acc(*x, Tensor::matrix(b, d, data)?);
                }
                Op::Sum(x) => acc(*x, Tensor::full(self.value(*x).shape(), g[0])),
                Op::Mean(x) => {
                    let t = self.value(*x);
                    acc(*x, Tensor::full(t.shape(), g[0] / t.len() as f64));
                }
                Op::Reduce { input, local_grad } => {
                    let data = local_grad.iter().map(|l| l * g[0]).collect();
                    acc(*input, Tensor::new(self.value(*input).shape().to_vec(), data)?);
                }
            }
            grads[idx] = Some(up);
        }
        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

/// Adjoints from one backward pass.
#[derive(Debug)]
pub struct Gradients {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Tensor {
        match self.grads.get(v.0) {
            Some(Some(t)) => t.clone(),
            _ => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(t) => t,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}
