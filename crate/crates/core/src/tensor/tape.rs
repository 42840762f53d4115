use super::kernels::{dot, gemm_acc, gemm_nt_acc, gemm_tn_acc, inverse_perm, permute};
use super::{Tensor, NORM_EPS};
use crate::error::{Error, Result};
use rand::Rng;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Reshape(Var),
    Permute { input: Var, perm: Vec<usize> },
    Add(Var, Var),
    AddBias { x: Var, bias: Var },
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Softmax { input: Var, axis: usize },
    CosineRows {
        a: Var,
        b: Var,
        a_norms: Vec<f64>,
        b_norms: Vec<f64>,
    },
    Gather { table: Var, ids: Vec<usize> },
    Dropout { input: Var, mask: Vec<f64> },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of executed differentiable operations.
///
/// Node order is execution order, so it is already topological; the backward
/// pass visits nodes strictly in reverse. A tape is single-use per optimizer
/// step: build, backward, read gradients, then [`Tape::clear`] or drop it.
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

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Records an input tensor. Gradients are kept iff `requires_grad` is set.
    pub fn leaf(&mut self, mut tensor: Tensor) -> Var {
        tensor.clear_grad();
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// First element of a node; intended for scalar losses.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.values()[0]
    }

    /// Gradient left on a leaf by the last [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].value.grad.take()
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn push(&mut self, op_name: &str, shape: Vec<usize>, values: Vec<f64>, op: Op, inputs: &[Var]) -> Result<Var> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: op_name.to_string(),
            });
        }
        let needs_grad = self.needs(inputs);
        self.nodes.push(Node {
            value: Tensor::from_parts(shape, values),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(
                "matmul",
                format!("cannot multiply {:?} by {:?}", sa, sb),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(&mut out, self.value(a).values(), self.value(b).values(), m, k, n);
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    /// Batched product over identical leading dimensions:
    /// `[..., m, k] × [..., k, n]`, or `[..., m, k] × [..., n, k]ᵀ` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || Error::dim("bmm", format!("cannot batch-multiply {:?} by {:?} (trans_b={})", sa, sb, trans_b));
        if sa.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(bad());
        }
        let r = sa.len();
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if trans_b { (sb[r - 1], sb[r - 2]) } else { (sb[r - 2], sb[r - 1]) };
        if k != kb {
            return Err(bad());
        }
        let batches: usize = sa[..r - 2].iter().product();
        let mut out = vec![0.0; batches * m * n];
        let (av, bv) = (self.value(a).values(), self.value(b).values());
        for i in 0..batches {
            let o = &mut out[i * m * n..(i + 1) * m * n];
            let ab = &av[i * m * k..(i + 1) * m * k];
            let bb = &bv[i * k * n..(i + 1) * k * n];
            if trans_b {
                gemm_nt_acc(o, ab, bb, m, k, n);
            } else {
                gemm_acc(o, ab, bb, m, k, n);
            }
        }
        let mut shape = sa[..r - 2].to_vec();
        shape.extend([m, n]);
        self.push("bmm", shape, out, Op::BatchMatMul { a, b, trans_b }, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("transpose", format!("expected 2-D, got {:?}", s)));
        }
        let (vals, shape) = permute(self.value(a).values(), &s, &[1, 0]);
        self.push("transpose", shape, vals, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshaped(shape)?;
        let vals = t.into_values();
        self.push("reshape", shape.to_vec(), vals, Op::Reshape(a), &[a])
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..s.len()).collect::<Vec<_>>() {
            return Err(Error::dim("permute", format!("{:?} is not a permutation of the axes of {:?}", perm, s)));
        }
        let (vals, shape) = permute(self.value(a).values(), &s, perm);
        self.push("permute", shape, vals, Op::Permute { input: a, perm: perm.to_vec() }, &[a])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, format!("shapes {:?} and {:?} differ", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let vals = self.value(a).values().iter().zip(self.value(b).values()).map(|(x, y)| x + y).collect();
        self.push("add", self.shape(a).to_vec(), vals, Op::Add(a, b), &[a, b])
    }

    /// Adds a length-`d` vector to every slice along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let d = *sx.last().unwrap_or(&0);
        if sb != [d] {
            return Err(Error::dim("add_bias", format!("bias {:?} does not match last axis of {:?}", sb, sx)));
        }
        let bv = self.value(bias).values();
        let vals = self.value(x).values().chunks(d).flat_map(|row| row.iter().zip(bv).map(|(a, b)| a + b)).collect();
        self.push("add_bias", sx.to_vec(), vals, Op::AddBias { x, bias }, &[x, bias])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let vals = self.value(a).values().iter().zip(self.value(b).values()).map(|(x, y)| x * y).collect();
        self.push("mul", self.shape(a).to_vec(), vals, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let vals = self.value(a).values().iter().map(|x| x * c).collect();
        self.push("scale", self.shape(a).to_vec(), vals, Op::Scale(a, c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).values().iter().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(Error::dim("mean", "empty tensor"));
        }
        let m = t.values().iter().sum::<f64>() / t.numel() as f64;
        self.push("mean", vec![1], vec![m], Op::Mean(a), &[a])
    }

    /// Softmax along `axis`, stabilized by subtracting the slice maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::dim("softmax", format!("empty or missing axis {} in {:?}", axis, shape)));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let mut out = self.value(x).values().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| out[at(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for a in 0..len {
                    let e = (out[at(a)] - max).exp();
                    out[at(a)] = e;
                    total += e;
                }
                for a in 0..len {
                    out[at(a)] /= total;
                }
            }
        }
        self.push("softmax", shape, out, Op::Softmax { input: x, axis }, &[x])
    }

    /// Pairwise cosine similarity between the rows of `a` (p×d) and `b` (q×d).
    /// Norms are floored at [`NORM_EPS`].
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::dim("cosine_rows", format!("row dimensions of {:?} and {:?} differ", sa, sb)));
        }
        let (p, q, d) = (sa[0], sb[0], sa[1]);
        let (av, bv) = (self.value(a).values(), self.value(b).values());
        let row_norms = |v: &[f64]| -> Vec<f64> {
            v.chunks(d.max(1)).map(|r| dot(r, r).sqrt()).collect()
        };
        let a_norms = if d == 0 { vec![0.0; p] } else { row_norms(av) };
        let b_norms = if d == 0 { vec![0.0; q] } else { row_norms(bv) };
        let mut out = vec![0.0; p * q];
        gemm_nt_acc(&mut out, av, bv, p, d, q);
        for i in 0..p {
            for j in 0..q {
                out[i * q + j] /= a_norms[i].max(NORM_EPS) * b_norms[j].max(NORM_EPS);
            }
        }
        self.push("cosine_rows", vec![p, q], out, Op::CosineRows { a, b, a_norms, b_norms }, &[a, b])
    }

    /// Gathers rows of a 2-D table; repeated ids accumulate in backward.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("embedding_lookup", format!("table must be 2-D, got {:?}", s)));
        }
        let (rows, d) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(Error::Index {
                op: "embedding_lookup",
                index: bad,
                bound: rows,
            });
        }
        let tv = self.value(table).values();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        self.push("embedding_lookup", vec![ids.len(), d], out, Op::Gather { table, ids: ids.to_vec() }, &[table])
    }

    /// Inverted dropout: survivors are scaled by 1/(1−ρ); identity when not
    /// training or when ρ = 0 (the RNG is not consumed in that case).
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rho: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Config(format!("dropout probability must be in [0, 1), got {rho}")));
        }
        if !training || rho == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rho);
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < rho { 0.0 } else { keep }).collect();
        let vals = self.value(x).values().iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.push("dropout", self.shape(x).to_vec(), vals, Op::Dropout { input: x, mask }, &[x])
    }

    /// Mean over rows of `−log softmax(logits)[target]`, via log-sum-exp.
    pub fn cross_entropy_from_logits(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() || s[0] == 0 || s[1] == 0 {
            return Err(Error::dim(
                "cross_entropy_from_logits",
                format!("logits {:?} vs {} targets", s, targets.len()),
            ));
        }
        let (b, m) = (s[0], s[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= m) {
            return Err(Error::Index {
                op: "cross_entropy_from_logits",
                index: bad,
                bound: m,
            });
        }
        let lv = self.value(logits).values();
        let mut probs = vec![0.0; b * m];
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &lv[r * m..(r + 1) * m];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
            for (p, z) in probs[r * m..(r + 1) * m].iter_mut().zip(row) {
                *p = (z - lse).exp();
            }
        }
        let loss = total / b as f64;
        self.push(
            "cross_entropy_from_logits",
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap_or(&0);
        if d == 0 || self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim("layer_norm", format!("input {:?} with gain {:?}", s, self.shape(gamma))));
        }
        let xv = self.value(x).values();
        let (g, bt) = (self.value(gamma).values(), self.value(beta).values());
        let rows = xv.len() / d;
        let mut normalized = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(d) {
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            for (j, v) in row.iter().enumerate() {
                let xh = (v - mu) * r;
                normalized.push(xh);
                out.push(xh * g[j] + bt[j]);
            }
        }
        self.push(
            "layer_norm",
            s,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let vals = self.value(x).values().iter().map(|&v| gelu(v)).collect();
        self.push("gelu", self.shape(x).to_vec(), vals, Op::Gelu(x), &[x])
    }

    /// Reverse pass from a single-element node. Leaves created with
    /// `requires_grad` receive a gradient (zeros if unreachable).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::dim("backward", format!("loss must be a scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let nodes = &self.nodes;
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                let n = &nodes[v.0];
                if n.needs_grad {
                    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.numel()]);
                    f(slot);
                }
            };
            let val = |v: Var| nodes[v.0].value.values();
            let shp = |v: Var| nodes[v.0].value.shape();

            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                Op::MatMul(a, b) => {
                    let (m, k, n) = (shp(*a)[0], shp(*a)[1], shp(*b)[1]);
                    acc(*a, &mut |da| gemm_nt_acc(da, &g, val(*b), m, n, k));
                    acc(*b, &mut |db| gemm_tn_acc(db, val(*a), &g, k, m, n));
                }
                Op::BatchMatMul { a, b, trans_b } => {
                    let sa = shp(*a);
                    let r = sa.len();
                    let (m, k) = (sa[r - 2], sa[r - 1]);
                    let n = node.value.shape()[r - 1];
                    let batches: usize = sa[..r - 2].iter().product();
                    let (av, bv) = (val(*a), val(*b));
                    acc(*a, &mut |da| {
                        for t in 0..batches {
                            let gb = &g[t * m * n..(t + 1) * m * n];
                            let bb = &bv[t * k * n..(t + 1) * k * n];
                            let out = &mut da[t * m * k..(t + 1) * m * k];
                            if *trans_b {
                                gemm_acc(out, gb, bb, m, n, k);
                            } else {
                                gemm_nt_acc(out, gb, bb, m, n, k);
                            }
                        }
                    });
                    acc(*b, &mut |db| {
                        for t in 0..batches {
                            let gb = &g[t * m * n..(t + 1) * m * n];
                            let ab = &av[t * m * k..(t + 1) * m * k];
                            let out = &mut db[t * k * n..(t + 1) * k * n];
                            if *trans_b {
                                gemm_tn_acc(out, gb, ab, n, m, k);
                            } else {
                                gemm_tn_acc(out, ab, gb, k, m, n);
                            }
                        }
                    });
                }
                Op::Transpose(a) => {
                    let (gt, _) = permute(&g, node.value.shape(), &[1, 0]);
                    acc(*a, &mut |da| add_into(da, &gt));
                }
                Op::Reshape(a) => acc(*a, &mut |da| add_into(da, &g)),
                Op::Permute { input, perm } => {
                    let (gp, _) = permute(&g, node.value.shape(), &inverse_perm(perm));
                    acc(*input, &mut |da| add_into(da, &gp));
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |da| add_into(da, &g));
                    acc(*b, &mut |db| add_into(db, &g));
                }
                Op::AddBias { x, bias } => {
                    acc(*x, &mut |dx| add_into(dx, &g));
                    acc(*bias, &mut |db| {
                        let d = db.len();
                        for row in g.chunks(d) {
                            add_into(db, row);
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    acc(*a, &mut |da| {
                        for ((d, gi), bi) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gi * bi;
                        }
                    });
                    acc(*b, &mut |db| {
                        for ((d, gi), ai) in db.iter_mut().zip(&g).zip(av) {
                            *d += gi * ai;
                        }
                    });
                }
                Op::Scale(a, c) => acc(*a, &mut |da| {
                    for (d, gi) in da.iter_mut().zip(&g) {
                        *d += c * gi;
                    }
                }),
                Op::Sum(a) => acc(*a, &mut |da| da.iter_mut().for_each(|d| *d += g[0])),
                Op::Mean(a) => acc(*a, &mut |da| {
                    let share = g[0] / da.len() as f64;
                    da.iter_mut().for_each(|d| *d += share);
                }),
                Op::Softmax { input, axis } => {
                    let y = node.value.values();
                    let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                    acc(*input, &mut |dx| {
                        for o in 0..outer {
                            for i in 0..inner {
                                let at = |a: usize| (o * len + a) * inner + i;
                                let s: f64 = (0..len).map(|a| y[at(a)] * g[at(a)]).sum();
                                for a in 0..len {
                                    dx[at(a)] += y[at(a)] * (g[at(a)] - s);
                                }
                            }
                        }
                    });
                }
                Op::CosineRows { a, b, a_norms, b_norms } => {
                    let c = node.value.values();
                    let (p, q) = (a_norms.len(), b_norms.len());
                    let d = shp(*a)[1];
                    let (av, bv) = (val(*a), val(*b));
                    // w_ij = g_ij / (|a_i| |b_j|)
                    let mut w = vec![0.0; p * q];
                    for i in 0..p {
                        for j in 0..q {
                            w[i * q + j] = g[i * q + j] / (a_norms[i].max(NORM_EPS) * b_norms[j].max(NORM_EPS));
                        }
                    }
                    acc(*a, &mut |da| {
                        gemm_acc(da, &w, bv, p, q, d);
                        for i in 0..p {
                            if a_norms[i] > NORM_EPS {
                                let gc: f64 = (0..q).map(|j| g[i * q + j] * c[i * q + j]).sum();
                                let coef = gc / (a_norms[i] * a_norms[i]);
                                for t in 0..d {
                                    da[i * d + t] -= coef * av[i * d + t];
                                }
                            }
                        }
                    });
                    acc(*b, &mut |db| {
                        gemm_tn_acc(db, &w, av, q, p, d);
                        for j in 0..q {
                            if b_norms[j] > NORM_EPS {
                                let gc: f64 = (0..p).map(|i| g[i * q + j] * c[i * q + j]).sum();
                                let coef = gc / (b_norms[j] * b_norms[j]);
                                for t in 0..d {
                                    db[j * d + t] -= coef * bv[j * d + t];
                                }
                            }
                        }
                    });
                }
                Op::Gather { table, ids } => {
                    let d = shp(*table)[1];
                    acc(*table, &mut |dt| {
                        for (r, &id) in ids.iter().enumerate() {
                            add_into(&mut dt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                        }
                    });
                }
                Op::Dropout { input, mask } => acc(*input, &mut |dx| {
                    for ((d, gi), m) in dx.iter_mut().zip(&g).zip(mask) {
                        *d += gi * m;
                    }
                }),
                Op::CrossEntropy { logits, targets, probs } => {
                    let b = targets.len();
                    let m = probs.len() / b;
                    let share = g[0] / b as f64;
                    acc(*logits, &mut |dl| {
                        for (r, &t) in targets.iter().enumerate() {
                            for j in 0..m {
                                let onehot = if j == t { 1.0 } else { 0.0 };
                                dl[r * m + j] += share * (probs[r * m + j] - onehot);
                            }
                        }
                    });
                }
                Op::LayerNorm { x, gamma, beta, normalized, rstd } => {
                    let d = shp(*gamma)[0];
                    let gv = val(*gamma);
                    acc(*gamma, &mut |dg| {
                        for (grow, xrow) in g.chunks(d).zip(normalized.chunks(d)) {
                            for j in 0..d {
                                dg[j] += grow[j] * xrow[j];
                            }
                        }
                    });
                    acc(*beta, &mut |db| {
                        for grow in g.chunks(d) {
                            add_into(db, grow);
                        }
                    });
                    acc(*x, &mut |dx| {
                        for (r, (grow, xrow)) in g.chunks(d).zip(normalized.chunks(d)).enumerate() {
                            let dxhat: Vec<f64> = grow.iter().zip(gv).map(|(a, b)| a * b).collect();
                            let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                            let mean_dx = dxhat.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                            for j in 0..d {
                                dx[r * d + j] += rstd[r] * (dxhat[j] - mean_d - xrow[j] * mean_dx);
                            }
                        }
                    });
                }
                Op::Gelu(x) => {
                    let xv = val(*x);
                    acc(*x, &mut |dx| {
                        for ((d, gi), &v) in dx.iter_mut().zip(&g).zip(xv) {
                            *d += gi * gelu_grad(v);
                        }
                    });
                }
            }
        }

        for i in 0..=loss.0 {
            if matches!(self.nodes[i].op, Op::Leaf) && self.nodes[i].value.requires_grad() {
                let n = self.nodes[i].value.numel();
                self.nodes[i].value.set_grad(vec![0.0; n]);
            }
        }
        for (i, g) in leaf_grads {
            if self.nodes[i].value.requires_grad() {
                self.nodes[i].value.set_grad(g);
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}
