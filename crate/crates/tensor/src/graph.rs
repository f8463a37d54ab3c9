use crate::error::{shape_err, Result, TensorError};
use crate::kernels::{self, split_axis};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise single-input operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Relu,
    /// tanh approximation: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
    Gelu,
    /// `log(1 + exp(x))`, overflow-safe.
    Softplus,
    Log,
    Exp,
    Square,
}

/// Pointwise two-input operations with trailing-suffix broadcasting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    SumAll(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Expand {
        x: Var,
        axis: usize,
    },
    Diagonal(Var),
    DiagEmbed(Var),
    Tril {
        x: Var,
        strict: bool,
    },
    SolveLower {
        l: Var,
        b: Var,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Param,
    Input,
    Computed,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    kind: Kind,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Tape of operations in creation (topological) order.
///
/// Every op appends one node whose inputs precede it, so the tape is acyclic
/// and a reverse sweep visits nodes in reverse topological order. A graph is
/// single-threaded; independent graphs can live on independent threads.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
    flops: u64,
    workspace_bytes: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: true,
            flops: 0,
            workspace_bytes: 0,
        }
    }

    /// A graph that records values only; parameters are treated as constants.
    pub fn no_grad() -> Self {
        Graph {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-add and softmax FLOPs executed so far (2 per multiply-add,
    /// 4 per softmax element).
    pub fn flops(&self) -> u64 {
        self.flops
    }

    /// Bytes held by non-parameter node values.
    pub fn workspace_bytes(&self) -> usize {
        self.workspace_bytes
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        let rg = self.grad_enabled;
        self.push_node(value, Op::Leaf, Kind::Param, rg)
    }

    /// Constant leaf (data, masks).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, Kind::Input, false)
    }

    /// Leaf with an explicit gradient flag.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let rg = requires_grad && self.grad_enabled;
        self.push_node(value, Op::Leaf, Kind::Input, rg)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_param(&self, v: Var) -> bool {
        self.nodes[v.0].kind == Kind::Param
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    fn push_node(&mut self, value: Tensor, op: Op, kind: Kind, requires_grad: bool) -> Var {
        if kind != Kind::Param {
            self.workspace_bytes += value.size_bytes();
        }
        let op = if requires_grad || kind != Kind::Computed {
            op
        } else {
            Op::Leaf
        };
        self.nodes.push(Node {
            value,
            op,
            kind,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let rg = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(Tensor::from_parts(shape, data), op, Kind::Computed, rg)
    }

    // ----------------------------------------------------------------- pointwise

    pub fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data: Vec<f64> = match kind {
            Unary::Neg => xv.data().iter().map(|&a| -a).collect(),
            Unary::Relu => xv.data().iter().map(|&a| a.max(0.0)).collect(),
            Unary::Gelu => xv.data().iter().map(|&a| gelu(a)).collect(),
            Unary::Softplus => xv.data().iter().map(|&a| softplus(a)).collect(),
            Unary::Exp => xv.data().iter().map(|&a| a.exp()).collect(),
            Unary::Square => xv.data().iter().map(|&a| a * a).collect(),
            Unary::Log => {
                if let Some(bad) = xv.data().iter().find(|&&a| !(a > 0.0)) {
                    return Err(TensorError::Numeric {
                        op: "log",
                        detail: format!("non-positive argument {bad}"),
                    });
                }
                xv.data().iter().map(|&a| a.ln()).collect()
            }
        };
        let shape = xv.shape().to_vec();
        Ok(self.push_op(shape, data, Op::Unary(kind, x), &[x]))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Neg, x)
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Gelu, x)
    }
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Softplus, x)
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }
    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Square, x)
    }

    /// Pointwise binary op. The smaller operand's shape must be a trailing
    /// suffix of the larger one; it is repeated over the leading dimensions.
    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        let out_shape = broadcast_shape(sa, sb).ok_or(()).or_else(|_| {
            shape_err(
                match kind {
                    Binary::Add => "add",
                    Binary::Sub => "sub",
                    Binary::Mul => "mul",
                    Binary::Div => "div",
                },
                sa,
                sb,
            )
        })?;
        let n: usize = out_shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let (na, nb) = (ad.len(), bd.len());
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let data: Vec<f64> = if na == nb {
            ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..n).map(|i| f(ad[i % na], bd[i % nb])).collect()
        };
        Ok(self.push_op(out_shape, data, Op::Binary(kind, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&a| a * c).collect();
        let shape = xv.shape().to_vec();
        self.push_op(shape, data, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&a| a + c).collect();
        let shape = xv.shape().to_vec();
        self.push_op(shape, data, Op::AddScalar(x), &[x])
    }

    // ----------------------------------------------------------------- linear algebra

    /// Batched matrix product `[..., p, q] × [..., q, r] -> [..., p, r]`.
    ///
    /// Batch dimensions broadcast when one batch shape is a trailing suffix of
    /// the other (including an unbatched 2-D operand).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return shape_err("matmul", sa, sb);
        }
        let (p, q, r) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
        let (ba_shape, bb_shape) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let batch_shape = broadcast_shape(ba_shape, bb_shape)
            .ok_or(())
            .or_else(|_| shape_err("matmul", sa, sb))?;
        let (ba, bb) = (
            ba_shape.iter().product::<usize>(),
            bb_shape.iter().product::<usize>(),
        );
        let batch: usize = batch_shape.iter().product();
        let mut out = vec![0.0; batch * p * r];
        let (ad, bd) = (av.data(), bv.data());
        for t in 0..batch {
            let (ai, bi) = (t % ba, t % bb);
            kernels::gemm_acc(
                &ad[ai * p * q..(ai + 1) * p * q],
                &bd[bi * q * r..(bi + 1) * q * r],
                &mut out[t * p * r..(t + 1) * p * r],
                p,
                q,
                r,
            );
        }
        self.flops += 2 * (batch * p * q * r) as u64;
        let mut shape = batch_shape;
        shape.extend([p, r]);
        Ok(self.push_op(shape, out, Op::MatMul(a, b), &[a, b]))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(TensorError::Dimension {
                op: "transpose",
                detail: format!("rank {rank} < 2"),
            });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(x, &perm)
    }

    // ----------------------------------------------------------------- normalizations

    /// Softmax along `axis` with max subtraction. `-inf` entries are allowed
    /// (they receive zero weight) as long as every slice has a finite entry.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Dimension {
                op: "softmax",
                detail: format!("axis {axis} for shape {shape:?}"),
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    let v = src[base + j * inner];
                    if v.is_nan() || v == f64::INFINITY {
                        return Err(TensorError::Numeric {
                            op: "softmax",
                            detail: format!("non-finite input {v}"),
                        });
                    }
                    max = max.max(v);
                }
                if !max.is_finite() {
                    return Err(TensorError::Numeric {
                        op: "softmax",
                        detail: "slice with no finite entry".into(),
                    });
                }
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (src[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    sum += e;
                }
                let inv = 1.0 / sum;
                for j in 0..n {
                    out[base + j * inner] *= inv;
                }
            }
        }
        self.flops += 4 * src.len() as u64;
        Ok(self.push_op(shape, out, Op::Softmax { x, axis }, &[x]))
    }

    /// Layer normalization over the last axis with population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let d = *shape.last().unwrap_or(&0);
        if d == 0 {
            return Err(TensorError::Dimension {
                op: "layer_norm",
                detail: "empty last dimension".into(),
            });
        }
        let (gs, bs) = (self.shape(gamma), self.shape(beta));
        if gs != [d] || bs != [d] {
            return shape_err("layer_norm", &shape, gs);
        }
        let rows = xv.numel() / d;
        let src = xv.data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        let inv_d = 1.0 / d as f64;
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() * inv_d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * inv_d;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for k in 0..d {
                let h = (row[k] - mean) * rs;
                xhat[r * d + k] = h;
                out[r * d + k] = h * gd[k] + bd[k];
            }
        }
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        };
        Ok(self.push_op(shape, out, op, &[x, gamma, beta]))
    }

    // ----------------------------------------------------------------- reductions

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push_op(vec![1], vec![s], Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Dimension {
                op: "sum_axis",
                detail: format!("axis {axis} for shape {shape:?}"),
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = xv.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let s = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(s) {
                    *d += v;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(self.push_op(out_shape, out, Op::SumAxis { x, axis }, &[x]))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self.shape(x).get(axis).unwrap_or(&1) as f64;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / n))
    }

    // ----------------------------------------------------------------- shape ops

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.numel() || shape.contains(&0) {
            return shape_err("reshape", xv.shape(), shape);
        }
        let data = xv.data().to_vec();
        Ok(self.push_op(shape.to_vec(), data, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let rank = xv.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return shape_err("permute", xv.shape(), perm);
        }
        let (shape, data) = kernels::permute(xv.data(), xv.shape(), perm);
        Ok(self.push_op(
            shape,
            data,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            &[x],
        ))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| TensorError::Contract("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Dimension {
                op: "concat",
                detail: format!("axis {axis} for shape {base:?}"),
            });
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return shape_err("concat", &base, s);
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis];
                let d = self.value(v).data();
                out.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push_op(
            shape,
            out,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            xs,
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::Dimension {
                op: "slice",
                detail: format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&d[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push_op(out_shape, out, Op::Slice { x, axis, start }, &[x]))
    }

    /// Insert a new axis at `axis` holding `n` copies of `x`.
    pub fn expand(&mut self, x: Var, axis: usize, n: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis > shape.len() || n == 0 {
            return Err(TensorError::Dimension {
                op: "expand",
                detail: format!("axis {axis} (x{n}) for shape {shape:?}"),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis..].iter().product();
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for _ in 0..n {
                out.extend_from_slice(&d[o * inner..(o + 1) * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape.insert(axis, n);
        Ok(self.push_op(out_shape, out, Op::Expand { x, axis }, &[x]))
    }

    // ----------------------------------------------------------------- triangular helpers

    fn square_dims(&self, x: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(x);
        let r = s.len();
        if r < 2 || s[r - 1] != s[r - 2] {
            return Err(TensorError::Dimension {
                op,
                detail: format!("expected [..., n, n], got {s:?}"),
            });
        }
        Ok((s[..r - 2].iter().product(), s[r - 1]))
    }

    /// `[..., n, n] -> [..., n]`.
    pub fn diagonal(&mut self, x: Var) -> Result<Var> {
        let (batch, n) = self.square_dims(x, "diagonal")?;
        let d = self.value(x).data();
        let out: Vec<f64> = (0..batch * n).map(|t| d[t * n + t % n]).collect();
        let mut shape = self.shape(x).to_vec();
        shape.pop();
        Ok(self.push_op(shape, out, Op::Diagonal(x), &[x]))
    }

    /// `[..., n] -> [..., n, n]` with zeros off the diagonal.
    pub fn diag_embed(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or_else(|| TensorError::Contract("diag_embed of scalar".into()))?;
        let d = self.value(x).data();
        let batch = d.len() / n;
        let mut out = vec![0.0; batch * n * n];
        for t in 0..batch * n {
            out[t * n + t % n] = d[t];
        }
        let mut out_shape = shape;
        out_shape.push(n);
        Ok(self.push_op(out_shape, out, Op::DiagEmbed(x), &[x]))
    }

    /// Lower triangle of the last two axes; `strict` also zeroes the diagonal.
    pub fn tril(&mut self, x: Var, strict: bool) -> Result<Var> {
        let (batch, n) = self.square_dims(x, "tril")?;
        let mut out = self.value(x).data().to_vec();
        for b in 0..batch {
            for i in 0..n {
                let from = if strict { i } else { i + 1 };
                for j in from..n {
                    out[b * n * n + i * n + j] = 0.0;
                }
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push_op(shape, out, Op::Tril { x, strict }, &[x]))
    }

    /// Solve `l · z = b` by forward substitution, `l: [..., n, n]` lower
    /// triangular, `b: [..., n]` with the same batch shape.
    pub fn solve_lower(&mut self, l: Var, b: Var) -> Result<Var> {
        let (batch, n) = self.square_dims(l, "solve_lower")?;
        let (sl, sb) = (self.shape(l), self.shape(b));
        if sb.len() + 1 != sl.len() || sb[..] != sl[..sl.len() - 1] {
            return shape_err("solve_lower", sl, sb);
        }
        let (ld, bd) = (self.value(l).data(), self.value(b).data());
        let mut z = vec![0.0; batch * n];
        for t in 0..batch {
            let lm = &ld[t * n * n..(t + 1) * n * n];
            for i in 0..n {
                let diag = lm[i * n + i];
                if diag == 0.0 || !diag.is_finite() {
                    return Err(TensorError::Numeric {
                        op: "solve_lower",
                        detail: format!("diagonal entry {diag} at {i}"),
                    });
                }
                let s = kernels::dot(&lm[i * n..i * n + i], &z[t * n..t * n + i]);
                z[t * n + i] = (bd[t * n + i] - s) / diag;
            }
        }
        let shape = sb.to_vec();
        Ok(self.push_op(shape, z, Op::SolveLower { l, b }, &[l, b]))
    }

    // ----------------------------------------------------------------- backward

    /// Reverse sweep from a scalar `loss`, accumulating into the `grad` of
    /// every reachable node that requires gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ln = &self.nodes[loss.0];
        if ln.value.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                ln.value.shape()
            )));
        }
        if !ln.requires_grad {
            return Err(TensorError::Contract(
                "backward on a loss that does not require gradients".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let nodes = &self.nodes;
            if !nodes[i].requires_grad {
                continue;
            }
            backprop_node(nodes, i, &g, &mut grads);
            let node = &mut self.nodes[i];
            match node.grad.as_mut() {
                Some(existing) => {
                    for (e, v) in existing.data_mut().iter_mut().zip(&g) {
                        *e += v;
                    }
                }
                None => {
                    node.grad = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                }
            }
        }
        Ok(())
    }

    /// Drop all accumulated gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let (big, small) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if big[big.len() - small.len()..] == *small {
        Some(big.to_vec())
    } else {
        None
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Accumulate into the gradient slot of `v` if it requires gradients.
fn acc<F: FnOnce(&mut [f64])>(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: F) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
    f(slot);
}

fn backprop_node(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Unary(kind, x) => {
            let xd = nodes[x.0].value.data();
            acc(nodes, grads, *x, |dx| match kind {
                Unary::Neg => dx.iter_mut().zip(g).for_each(|(d, &g)| *d -= g),
                Unary::Relu => {
                    for k in 0..dx.len() {
                        if xd[k] > 0.0 {
                            dx[k] += g[k];
                        }
                    }
                }
                Unary::Gelu => {
                    for k in 0..dx.len() {
                        dx[k] += g[k] * gelu_grad(xd[k]);
                    }
                }
                Unary::Softplus => {
                    for k in 0..dx.len() {
                        dx[k] += g[k] * sigmoid(xd[k]);
                    }
                }
                Unary::Log => {
                    for k in 0..dx.len() {
                        dx[k] += g[k] / xd[k];
                    }
                }
                Unary::Exp => {
                    for k in 0..dx.len() {
                        dx[k] += g[k] * out[k];
                    }
                }
                Unary::Square => {
                    for k in 0..dx.len() {
                        dx[k] += 2.0 * g[k] * xd[k];
                    }
                }
            });
        }
        Op::Binary(kind, a, b) => {
            let (ad, bd) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            let (na, nb) = (ad.len(), bd.len());
            let n = g.len();
            acc(nodes, grads, *a, |da| {
                for k in 0..n {
                    let v = match kind {
                        Binary::Add | Binary::Sub => g[k],
                        Binary::Mul => g[k] * bd[k % nb],
                        Binary::Div => g[k] / bd[k % nb],
                    };
                    da[k % na] += v;
                }
            });
            acc(nodes, grads, *b, |db| {
                for k in 0..n {
                    let v = match kind {
                        Binary::Add => g[k],
                        Binary::Sub => -g[k],
                        Binary::Mul => g[k] * ad[k % na],
                        Binary::Div => {
                            let y = bd[k % nb];
                            -g[k] * ad[k % na] / (y * y)
                        }
                    };
                    db[k % nb] += v;
                }
            });
        }
        Op::Scale(x, c) => acc(nodes, grads, *x, |dx| kernels::axpy(*c, g, dx)),
        Op::AddScalar(x) => acc(nodes, grads, *x, |dx| kernels::axpy(1.0, g, dx)),
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let (sa, sb) = (av.shape(), bv.shape());
            let (p, q, r) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
            let ba = av.numel() / (p * q);
            let bb = bv.numel() / (q * r);
            let batch = g.len() / (p * r);
            acc(nodes, grads, *a, |da| {
                for t in 0..batch {
                    let (ai, bi) = (t % ba, t % bb);
                    kernels::gemm_nt_acc(
                        &g[t * p * r..(t + 1) * p * r],
                        &bv.data()[bi * q * r..(bi + 1) * q * r],
                        &mut da[ai * p * q..(ai + 1) * p * q],
                        p,
                        q,
                        r,
                    );
                }
            });
            acc(nodes, grads, *b, |db| {
                for t in 0..batch {
                    let (ai, bi) = (t % ba, t % bb);
                    kernels::gemm_tn_acc(
                        &av.data()[ai * p * q..(ai + 1) * p * q],
                        &g[t * p * r..(t + 1) * p * r],
                        &mut db[bi * q * r..(bi + 1) * q * r],
                        p,
                        q,
                        r,
                    );
                }
            });
        }
        Op::Softmax { x, axis } => {
            let (outer, n, inner) = split_axis(node.value.shape(), *axis);
            acc(nodes, grads, *x, |dx| {
                for o in 0..outer {
                    for ii in 0..inner {
                        let base = o * n * inner + ii;
                        let mut s = 0.0;
                        for j in 0..n {
                            let k = base + j * inner;
                            s += out[k] * g[k];
                        }
                        for j in 0..n {
                            let k = base + j * inner;
                            dx[k] += out[k] * (g[k] - s);
                        }
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let d = nodes[gamma.0].value.numel();
            let rows = rstd.len();
            let gd = nodes[gamma.0].value.data();
            acc(nodes, grads, *gamma, |dg| {
                for r in 0..rows {
                    for k in 0..d {
                        dg[k] += g[r * d + k] * xhat[r * d + k];
                    }
                }
            });
            acc(nodes, grads, *beta, |db| {
                for r in 0..rows {
                    kernels::axpy(1.0, &g[r * d..(r + 1) * d], db);
                }
            });
            acc(nodes, grads, *x, |dx| {
                let inv_d = 1.0 / d as f64;
                let mut dh = vec![0.0; d];
                for r in 0..rows {
                    let (mut m1, mut m2) = (0.0, 0.0);
                    for k in 0..d {
                        dh[k] = g[r * d + k] * gd[k];
                        m1 += dh[k];
                        m2 += dh[k] * xhat[r * d + k];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    for k in 0..d {
                        dx[r * d + k] += rstd[r] * (dh[k] - m1 - xhat[r * d + k] * m2);
                    }
                }
            });
        }
        Op::SumAll(x) => acc(nodes, grads, *x, |dx| dx.iter_mut().for_each(|d| *d += g[0])),
        Op::SumAxis { x, axis } => {
            let (outer, n, inner) = split_axis(nodes[x.0].value.shape(), *axis);
            acc(nodes, grads, *x, |dx| {
                for o in 0..outer {
                    for j in 0..n {
                        kernels::axpy(
                            1.0,
                            &g[o * inner..(o + 1) * inner],
                            &mut dx[(o * n + j) * inner..(o * n + j + 1) * inner],
                        );
                    }
                }
            });
        }
        Op::Reshape(x) => acc(nodes, grads, *x, |dx| kernels::axpy(1.0, g, dx)),
        Op::Permute { x, perm } => {
            let inv = kernels::inverse_permutation(perm);
            let (_, back) = kernels::permute(g, node.value.shape(), &inv);
            acc(nodes, grads, *x, |dx| kernels::axpy(1.0, &back, dx));
        }
        Op::Concat { xs, axis } => {
            let shape = node.value.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[*axis];
            let mut offset = 0;
            for v in xs {
                let n = nodes[v.0].value.shape()[*axis];
                acc(nodes, grads, *v, |dv| {
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + n) * inner];
                        kernels::axpy(1.0, src, &mut dv[o * n * inner..(o + 1) * n * inner]);
                    }
                });
                offset += n;
            }
        }
        Op::Slice { x, axis, start } => {
            let (outer, n, inner) = split_axis(nodes[x.0].value.shape(), *axis);
            let len = node.value.shape()[*axis];
            acc(nodes, grads, *x, |dx| {
                for o in 0..outer {
                    kernels::axpy(
                        1.0,
                        &g[o * len * inner..(o + 1) * len * inner],
                        &mut dx[(o * n + start) * inner..(o * n + start + len) * inner],
                    );
                }
            });
        }
        Op::Expand { x, axis } => {
            let shape = node.value.shape();
            let n = shape[*axis];
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            acc(nodes, grads, *x, |dx| {
                for o in 0..outer {
                    for j in 0..n {
                        kernels::axpy(
                            1.0,
                            &g[(o * n + j) * inner..(o * n + j + 1) * inner],
                            &mut dx[o * inner..(o + 1) * inner],
                        );
                    }
                }
            });
        }
        Op::Diagonal(x) => {
            let n = *node.value.shape().last().unwrap();
            acc(nodes, grads, *x, |dx| {
                for (t, &gv) in g.iter().enumerate() {
                    dx[t * n + t % n] += gv;
                }
            });
        }
        Op::DiagEmbed(x) => {
            let n = *nodes[x.0].value.shape().last().unwrap();
            acc(nodes, grads, *x, |dx| {
                for (t, d) in dx.iter_mut().enumerate() {
                    *d += g[t * n + t % n];
                }
            });
        }
        Op::Tril { x, strict } => {
            let n = *node.value.shape().last().unwrap();
            acc(nodes, grads, *x, |dx| {
                for (k, d) in dx.iter_mut().enumerate() {
                    let (i, j) = ((k / n) % n, k % n);
                    if j < i || (!strict && j == i) {
                        *d += g[k];
                    }
                }
            });
        }
        Op::SolveLower { l, b } => {
            let lv = nodes[l.0].value.data();
            let n = *node.value.shape().last().unwrap();
            let batch = out.len() / n;
            // gb = L^{-T} g via back substitution.
            let mut gb = vec![0.0; batch * n];
            for t in 0..batch {
                let lm = &lv[t * n * n..(t + 1) * n * n];
                for i in (0..n).rev() {
                    let mut s = g[t * n + i];
                    for k in i + 1..n {
                        s -= lm[k * n + i] * gb[t * n + k];
                    }
                    gb[t * n + i] = s / lm[i * n + i];
                }
            }
            acc(nodes, grads, *l, |dl| {
                for t in 0..batch {
                    for i in 0..n {
                        let gi = gb[t * n + i];
                        for j in 0..=i {
                            dl[t * n * n + i * n + j] -= gi * out[t * n + j];
                        }
                    }
                }
            });
            acc(nodes, grads, *b, |db| kernels::axpy(1.0, &gb, db));
        }
    }
}
