//! Reverse-mode differentiation over a closed set of registered primitives.
//!
//! Operations are recorded on a linear tape as they execute; `backward`
//! replays the tape in reverse and accumulates vector-Jacobian products.
//! Because the primitive set is a closed enum, computations built through
//! the tape are differentiable by construction; there is no way to record
//! an unregistered operation.

use super::kernels as k;
use super::tensor::Tensor;

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(ValueId, ValueId),
    MatmulNt(ValueId, ValueId),
    Add(ValueId, ValueId),
    AddBiasRow(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Scale(ValueId, f64),
    /// Adds a non-differentiable constant tensor (attention masks).
    AddConst(ValueId),
    Sigmoid(ValueId),
    Tanh(ValueId),
    Swish(ValueId),
    Relu(ValueId),
    SoftmaxRows(ValueId),
    LogSoftmaxRows(ValueId),
    LayerNorm {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: f64,
    },
    GroupNorm {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        groups: usize,
        eps: f64,
    },
    DepthwiseConv {
        x: ValueId,
        kernel: ValueId,
        left_pad: usize,
        right_pad: usize,
    },
    GatherRows(ValueId, Vec<usize>),
    SliceCols {
        x: ValueId,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<ValueId>),
    ConcatRows(Vec<ValueId>),
    OuterRowSum(ValueId, ValueId),
    SumAll(ValueId),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients indexed by tape value; absent entries are zero.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient of a value, materializing zeros when it never received one.
    pub fn get_or_zeros(&self, id: ValueId, shape: &[usize]) -> Tensor {
        self.grads[id.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> ValueId {
        self.nodes.push(Node { op, value });
        ValueId(self.nodes.len() - 1)
    }

    /// Insert an input value (parameter or data).
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v = k::matmul(self.value(a), self.value(b));
        self.push(Op::Matmul(a, b), v)
    }

    /// a · bᵀ.
    pub fn matmul_nt(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v = k::matmul_nt(self.value(a), self.value(b));
        self.push(Op::MatmulNt(a, b), v)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v = k::add(self.value(a), self.value(b));
        self.push(Op::Add(a, b), v)
    }

    pub fn add_bias_row(&mut self, x: ValueId, b: ValueId) -> ValueId {
        let v = k::add_bias_row(self.value(x), self.value(b));
        self.push(Op::AddBiasRow(x, b), v)
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v = k::mul(self.value(a), self.value(b));
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> ValueId {
        let v = k::scale(self.value(x), c);
        self.push(Op::Scale(x, c), v)
    }

    pub fn add_const(&mut self, x: ValueId, constant: &Tensor) -> ValueId {
        assert_eq!(self.value(x).shape(), constant.shape(), "add_const shape");
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(constant.data())
            .map(|(a, b)| a + b)
            .collect();
        let v = Tensor::new(constant.shape().to_vec(), data).unwrap();
        self.push(Op::AddConst(x), v)
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let v = k::sigmoid(self.value(x));
        self.push(Op::Sigmoid(x), v)
    }

    pub fn tanh(&mut self, x: ValueId) -> ValueId {
        let v = k::tanh(self.value(x));
        self.push(Op::Tanh(x), v)
    }

    pub fn swish(&mut self, x: ValueId) -> ValueId {
        let v = k::swish(self.value(x));
        self.push(Op::Swish(x), v)
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let v = k::relu(self.value(x));
        self.push(Op::Relu(x), v)
    }

    pub fn softmax_rows(&mut self, x: ValueId) -> ValueId {
        let v = k::softmax_rows(self.value(x));
        self.push(Op::SoftmaxRows(x), v)
    }

    pub fn log_softmax_rows(&mut self, x: ValueId) -> ValueId {
        let v = k::log_softmax_rows(self.value(x));
        self.push(Op::LogSoftmaxRows(x), v)
    }

    pub fn layer_norm(&mut self, x: ValueId, gamma: ValueId, beta: ValueId, eps: f64) -> ValueId {
        let v = k::layer_norm_rows(self.value(x), self.value(gamma), self.value(beta), eps);
        self.push(Op::LayerNorm { x, gamma, beta, eps }, v)
    }

    pub fn group_norm(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        groups: usize,
        eps: f64,
    ) -> ValueId {
        let v = k::group_norm_rows(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            groups,
            eps,
        );
        self.push(
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                eps,
            },
            v,
        )
    }

    pub fn depthwise_conv(
        &mut self,
        x: ValueId,
        kernel: ValueId,
        left_pad: usize,
        right_pad: usize,
    ) -> ValueId {
        let v = k::depthwise_conv(self.value(x), self.value(kernel), left_pad, right_pad);
        self.push(
            Op::DepthwiseConv {
                x,
                kernel,
                left_pad,
                right_pad,
            },
            v,
        )
    }

    pub fn gather_rows(&mut self, table: ValueId, ids: &[usize]) -> ValueId {
        let v = k::gather_rows(self.value(table), ids);
        self.push(Op::GatherRows(table, ids.to_vec()), v)
    }

    pub fn slice_cols(&mut self, x: ValueId, start: usize, len: usize) -> ValueId {
        let v = k::slice_cols(self.value(x), start, len);
        self.push(Op::SliceCols { x, start, len }, v)
    }

    pub fn concat_cols(&mut self, parts: &[ValueId]) -> ValueId {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = k::concat_cols(&tensors);
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn concat_rows(&mut self, parts: &[ValueId]) -> ValueId {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = k::concat_rows(&tensors);
        self.push(Op::ConcatRows(parts.to_vec()), v)
    }

    pub fn outer_row_sum(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v = k::outer_row_sum(self.value(a), self.value(b));
        self.push(Op::OuterRowSum(a, b), v)
    }

    pub fn sum_all(&mut self, x: ValueId) -> ValueId {
        let v = k::sum_all(self.value(x));
        self.push(Op::SumAll(x), v)
    }

    /// Reverse sweep seeded with an arbitrary cotangent at `seed`.
    pub fn backward(&self, seed: ValueId, seed_grad: Tensor) -> Gradients {
        assert_eq!(
            self.value(seed).shape(),
            seed_grad.shape(),
            "backward seed shape"
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[seed.0] = Some(seed_grad);

        for idx in (0..self.nodes.len()).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_into_inputs(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate_into_inputs(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                accum(grads, *a, k::matmul_nt(g, self.value(*b)));
                accum(grads, *b, k::matmul_tn(self.value(*a), g));
            }
            Op::MatmulNt(a, b) => {
                accum(grads, *a, k::matmul(g, self.value(*b)));
                accum(grads, *b, k::matmul_tn(g, self.value(*a)));
            }
            Op::Add(a, b) => {
                accum(grads, *a, g.clone());
                accum(grads, *b, g.clone());
            }
            Op::AddBiasRow(x, b) => {
                accum(grads, *x, g.clone());
                let n = g.cols();
                let mut db = vec![0.0; n];
                for i in 0..g.rows() {
                    for (j, &v) in g.row(i).iter().enumerate() {
                        db[j] += v;
                    }
                }
                accum(
                    grads,
                    *b,
                    Tensor::new(self.value(*b).shape().to_vec(), db).unwrap(),
                );
            }
            Op::Mul(a, b) => {
                accum(grads, *a, k::mul(g, self.value(*b)));
                accum(grads, *b, k::mul(g, self.value(*a)));
            }
            Op::Scale(x, c) => {
                accum(grads, *x, k::scale(g, *c));
            }
            Op::AddConst(x) => {
                accum(grads, *x, g.clone());
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| gv * yv * (1.0 - yv))
                    .collect();
                accum(grads, *x, Tensor::new(y.shape().to_vec(), data).unwrap());
            }
            Op::Tanh(x) => {
                let y = &node.value;
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| gv * (1.0 - yv * yv))
                    .collect();
                accum(grads, *x, Tensor::new(y.shape().to_vec(), data).unwrap());
            }
            Op::Swish(x) => {
                let xin = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xin.data())
                    .map(|(gv, &xv)| {
                        let s = k::sigmoid_scalar(xv);
                        gv * (s + xv * s * (1.0 - s))
                    })
                    .collect();
                accum(grads, *x, Tensor::new(xin.shape().to_vec(), data).unwrap());
            }
            Op::Relu(x) => {
                let xin = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xin.data())
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                accum(grads, *x, Tensor::new(xin.shape().to_vec(), data).unwrap());
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let (m, n) = (y.rows(), y.cols());
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accum(grads, *x, Tensor::new(vec![m, n], dx).unwrap());
            }
            Op::LogSoftmaxRows(x) => {
                let p = k::softmax_rows(self.value(*x));
                let (m, n) = (p.rows(), p.cols());
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let gr = g.row(i);
                    let gsum: f64 = gr.iter().sum();
                    let pr = p.row(i);
                    for j in 0..n {
                        dx[i * n + j] = gr[j] - pr[j] * gsum;
                    }
                }
                accum(grads, *x, Tensor::new(vec![m, n], dx).unwrap());
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (dx, dgamma, dbeta) = norm_backward(
                    self.value(*x),
                    self.value(*gamma),
                    g,
                    1,
                    *eps,
                );
                accum(grads, *x, dx);
                accum(
                    grads,
                    *gamma,
                    Tensor::new(self.value(*gamma).shape().to_vec(), dgamma.into_data()).unwrap(),
                );
                accum(
                    grads,
                    *beta,
                    Tensor::new(self.value(*beta).shape().to_vec(), dbeta.into_data()).unwrap(),
                );
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                eps,
            } => {
                let (dx, dgamma, dbeta) = norm_backward(
                    self.value(*x),
                    self.value(*gamma),
                    g,
                    *groups,
                    *eps,
                );
                accum(grads, *x, dx);
                accum(
                    grads,
                    *gamma,
                    Tensor::new(self.value(*gamma).shape().to_vec(), dgamma.into_data()).unwrap(),
                );
                accum(
                    grads,
                    *beta,
                    Tensor::new(self.value(*beta).shape().to_vec(), dbeta.into_data()).unwrap(),
                );
            }
            Op::DepthwiseConv {
                x,
                kernel,
                left_pad,
                right_pad: _,
            } => {
                let xin = self.value(*x);
                let kin = self.value(*kernel);
                let (t_len, c) = (xin.rows(), xin.cols());
                let w = kin.rows();
                let mut dx = vec![0.0; t_len * c];
                let mut dk = vec![0.0; w * c];
                for t in 0..t_len {
                    let gr = g.row(t);
                    for j in 0..w {
                        let src = t as isize + j as isize - *left_pad as isize;
                        if src < 0 || src >= t_len as isize {
                            continue;
                        }
                        let s = src as usize;
                        let kr = kin.row(j);
                        let xr = xin.row(s);
                        for ch in 0..c {
                            dx[s * c + ch] += gr[ch] * kr[ch];
                            dk[j * c + ch] += gr[ch] * xr[ch];
                        }
                    }
                }
                accum(grads, *x, Tensor::new(vec![t_len, c], dx).unwrap());
                accum(grads, *kernel, Tensor::new(vec![w, c], dk).unwrap());
            }
            Op::GatherRows(table, ids) => {
                let tbl = self.value(*table);
                let (v, d) = (tbl.rows(), tbl.cols());
                let mut dt = vec![0.0; v * d];
                for (i, &id) in ids.iter().enumerate() {
                    let gr = g.row(i);
                    for j in 0..d {
                        dt[id * d + j] += gr[j];
                    }
                }
                accum(grads, *table, Tensor::new(vec![v, d], dt).unwrap());
            }
            Op::SliceCols { x, start, len } => {
                let xin = self.value(*x);
                let (m, n) = (xin.rows(), xin.cols());
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let gr = g.row(i);
                    for j in 0..*len {
                        dx[i * n + start + j] = gr[j];
                    }
                }
                accum(grads, *x, Tensor::new(vec![m, n], dx).unwrap());
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    accum(grads, p, k::slice_cols(g, offset, w));
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    let n = g.cols();
                    let data = g.data()[offset * n..(offset + h) * n].to_vec();
                    accum(grads, p, Tensor::new(vec![h, n], data).unwrap());
                    offset += h;
                }
            }
            Op::OuterRowSum(a, b) => {
                let (m, kk) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).rows();
                let mut da = vec![0.0; m * kk];
                let mut db = vec![0.0; n * kk];
                for i in 0..m {
                    for j in 0..n {
                        let gr = g.row(i * n + j);
                        for c in 0..kk {
                            da[i * kk + c] += gr[c];
                            db[j * kk + c] += gr[c];
                        }
                    }
                }
                accum(grads, *a, Tensor::new(vec![m, kk], da).unwrap());
                accum(grads, *b, Tensor::new(vec![n, kk], db).unwrap());
            }
            Op::SumAll(x) => {
                let xin = self.value(*x);
                let gs = g.scalar_value();
                accum(grads, *x, Tensor::filled(xin.shape(), gs));
            }
        }
    }
}

/// Shared backward for layer norm (groups = 1 over the whole row) and group
/// norm. Returns (dx, dgamma, dbeta); dgamma/dbeta are per-channel rows.
fn norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    g: &Tensor,
    groups: usize,
    eps: f64,
) -> (Tensor, Tensor, Tensor) {
    let (m, n) = (x.rows(), x.cols());
    let gs = n / groups;
    let mut dx = vec![0.0; m * n];
    let mut dgamma = vec![0.0; n];
    let mut dbeta = vec![0.0; n];
    for i in 0..m {
        let row = x.row(i);
        let grow = g.row(i);
        for gi in 0..groups {
            let lo = gi * gs;
            let seg = &row[lo..lo + gs];
            let mean = seg.iter().sum::<f64>() / gs as f64;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / gs as f64;
            let inv = 1.0 / (var + eps).sqrt();

            // h = upstream grad * gamma, restricted to the group segment
            let mut mean_h = 0.0;
            let mut mean_hx = 0.0;
            for c in 0..gs {
                let j = lo + c;
                let xhat = (row[j] - mean) * inv;
                let h = grow[j] * gamma.data()[j];
                mean_h += h;
                mean_hx += h * xhat;
                dgamma[j] += grow[j] * xhat;
                dbeta[j] += grow[j];
            }
            mean_h /= gs as f64;
            mean_hx /= gs as f64;
            for c in 0..gs {
                let j = lo + c;
                let xhat = (row[j] - mean) * inv;
                let h = grow[j] * gamma.data()[j];
                dx[i * n + j] = inv * (h - mean_h - xhat * mean_hx);
            }
        }
    }
    (
        Tensor::new(vec![m, n], dx).unwrap(),
        Tensor::new(vec![n], dgamma).unwrap(),
        Tensor::new(vec![n], dbeta).unwrap(),
    )
}

fn accum(grads: &mut [Option<Tensor>], id: ValueId, delta: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            assert_eq!(existing.shape(), delta.shape(), "gradient shape mismatch");
            for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}
