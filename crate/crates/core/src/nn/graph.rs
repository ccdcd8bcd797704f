use super::{gemm, Gradients, MatMut, MatRef, ParamId, ParameterStore, Real, LN_EPS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<R> {
    Param(ParamId),
    Constant,
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        c: R,
    },
    Embedding {
        table: NodeId,
        idx: Vec<usize>,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<R>,
        rstd: Vec<R>,
    },
    Gelu {
        x: NodeId,
    },
    Softmax {
        x: NodeId,
    },
    Attention {
        qkv: NodeId,
        heads: usize,
        probs: Vec<R>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<Option<usize>>,
        probs: Vec<R>,
        count: usize,
    },
    Sum {
        x: NodeId,
    },
    Mean {
        x: NodeId,
    },
    ConcatCols {
        xs: Vec<NodeId>,
    },
    Reshape {
        x: NodeId,
    },
    StraightThrough {
        x: NodeId,
    },
    GroupMean {
        x: NodeId,
        groups: Vec<Vec<usize>>,
    },
    NeighborMean {
        x: NodeId,
        neighbors: Vec<Vec<usize>>,
    },
}

#[derive(Debug)]
struct Node<R> {
    shape: Vec<usize>,
    /// `None` for parameters, whose values stay in the store.
    value: Option<Vec<R>>,
    op: Op<R>,
    requires_grad: bool,
}

/// One recorded forward computation.
///
/// Shapes are row-major; every op treats its input as a matrix whose columns
/// are the last dimension and whose rows are everything before it.
pub struct Graph<'s, R: Real> {
    store: &'s ParameterStore<R>,
    nodes: Vec<Node<R>>,
    param_nodes: Vec<Option<NodeId>>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        Some((&c, rest)) => (rest.iter().product(), c),
        None => (1, 1),
    }
}

fn add_into<R: Real>(dst: &mut [R], src: &[R]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<'s, R: Real> Graph<'s, R> {
    pub fn new(store: &'s ParameterStore<R>) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParameterStore<R> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[R] {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.store.value(*p),
            _ => unreachable!("only parameters are stored by reference"),
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, id: NodeId) -> R {
        self.value(id)[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<R>, op: Op<R>, inputs: &[NodeId]) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value: Some(value),
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        self.nodes.push(Node {
            shape: self.store.get(id).shape().to_vec(),
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<R>) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "constant",
                format!("shape {shape:?} vs {} values", data.len()),
            ));
        }
        self.nodes.push(Node {
            shape,
            value: Some(data),
            op: Op::Constant,
            requires_grad: false,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// `x · w (+ b)` with `w` of shape `[in, out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (n, k) = rows_cols(self.shape(x));
        let ws = self.shape(w);
        if ws.len() != 2 || ws[0] != k {
            return Err(Error::shape(
                "linear",
                format!("x {:?} vs w {:?}", self.shape(x), ws),
            ));
        }
        let m = ws[1];
        let mut out = vec![R::zero(); n * m];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != m {
                return Err(Error::shape(
                    "linear",
                    format!("bias {} vs out {m}", bv.len()),
                ));
            }
            for row in out.chunks_exact_mut(m) {
                row.copy_from_slice(bv);
            }
        }
        let beta = if b.is_some() { R::one() } else { R::zero() };
        gemm(
            R::one(),
            MatRef::new(self.value(x), n, k),
            MatRef::new(self.value(w), k, m),
            beta,
            MatMut::new(&mut out, n, m),
        );
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = m;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(shape, out, Op::Linear { x, w, b }, &inputs))
    }

    /// Plain matrix product of `[n, k]` and `[k, m]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![R::zero(); n * m];
        gemm(
            R::one(),
            MatRef::new(self.value(a), n, k),
            MatRef::new(self.value(b), k, m),
            R::zero(),
            MatMut::new(&mut out, n, m),
        );
        Ok(self.push(vec![n, m], out, Op::MatMul { a, b }, &[a, b]))
    }

    fn same_numel(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).len() != self.value(b).len() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_numel("add", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| *x + *y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_numel("mul", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| *x * *y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let c = R::lit(c);
        let out = self.value(x).iter().map(|v| *v * c).collect();
        self.push(self.shape(x).to_vec(), out, Op::Scale { x, c }, &[x])
    }

    /// Rows of `table` (`[vocab, dim]`) selected by `idx`.
    pub fn embedding(&mut self, table: NodeId, idx: &[usize]) -> Result<NodeId> {
        let ts = self.shape(table);
        if ts.len() != 2 {
            return Err(Error::shape("embedding", format!("table {ts:?}")));
        }
        let (vocab, dim) = (ts[0], ts[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= vocab) {
            return Err(Error::shape(
                "embedding",
                format!("index {bad} >= vocab {vocab}"),
            ));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(idx.len() * dim);
        for &i in idx {
            out.extend_from_slice(&tv[i * dim..(i + 1) * dim]);
        }
        Ok(self.push(
            vec![idx.len(), dim],
            out,
            Op::Embedding {
                table,
                idx: idx.to_vec(),
            },
            &[table],
        ))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (n, d) = rows_cols(self.shape(x));
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "x {:?} vs affine {}",
                    self.shape(x),
                    self.value(gamma).len()
                ),
            ));
        }
        let eps = R::lit(LN_EPS);
        let dn = R::lit(d as f64);
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![R::zero(); n * d];
        let mut rstd = vec![R::zero(); n];
        let mut out = vec![R::zero(); n * d];
        for r in 0..n {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<R>() / dn;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<R>() / dn;
            let rs = R::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let (c, a) = (R::lit(GELU_C), R::lit(GELU_A));
        let half = R::lit(0.5);
        let out = self
            .value(x)
            .iter()
            .map(|&v| half * v * (R::one() + (c * (v + a * v * v * v)).tanh()))
            .collect();
        self.push(self.shape(x).to_vec(), out, Op::Gelu { x }, &[x])
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let (_, d) = rows_cols(self.shape(x));
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(d.max(1)) {
            softmax_in_place(row);
        }
        self.push(self.shape(x).to_vec(), out, Op::Softmax { x }, &[x])
    }

    /// Multi-head scaled dot-product self-attention.
    ///
    /// `qkv` is `[len, 3·hidden]` holding queries, keys and values side by
    /// side; the result is `[len, hidden]`. With `causal`, position `i` only
    /// attends to positions `≤ i`.
    pub fn attention(&mut self, qkv: NodeId, heads: usize, causal: bool) -> Result<NodeId> {
        let (len, w) = rows_cols(self.shape(qkv));
        if len == 0 || heads == 0 || w % (3 * heads) != 0 {
            return Err(Error::shape(
                "attention",
                format!("qkv {:?} with {heads} heads", self.shape(qkv)),
            ));
        }
        let hidden = w / 3;
        let dh = hidden / heads;
        let scale = R::lit(1.0 / (dh as f64).sqrt());
        let qv = self.value(qkv);
        let mut probs = vec![R::zero(); heads * len * len];
        let mut out = vec![R::zero(); len * hidden];
        for h in 0..heads {
            let p = &mut probs[h * len * len..(h + 1) * len * len];
            let q = MatRef::strided(&qv[h * dh..], len, dh, w, 1);
            let k = MatRef::strided(&qv[hidden + h * dh..], len, dh, w, 1);
            let v = MatRef::strided(&qv[2 * hidden + h * dh..], len, dh, w, 1);
            gemm(scale, q, k.t(), R::zero(), MatMut::new(p, len, len));
            for i in 0..len {
                let row = &mut p[i * len..(i + 1) * len];
                if causal {
                    softmax_in_place(&mut row[..=i]);
                    row[i + 1..].iter_mut().for_each(|x| *x = R::zero());
                } else {
                    softmax_in_place(row);
                }
            }
            gemm(
                R::one(),
                MatRef::new(p, len, len),
                v,
                R::zero(),
                MatMut::strided(&mut out[h * dh..], len, dh, hidden, 1),
            );
        }
        Ok(self.push(
            vec![len, hidden],
            out,
            Op::Attention { qkv, heads, probs },
            &[qkv],
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` (`[n, classes]`); `None` targets are ignored.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> Result<NodeId> {
        let (n, c) = rows_cols(self.shape(logits));
        if targets.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("{n} rows vs {} targets", targets.len()),
            ));
        }
        if let Some(t) = targets.iter().flatten().find(|&&t| t >= c) {
            return Err(Error::shape(
                "cross_entropy",
                format!("target {t} >= {c} classes"),
            ));
        }
        let lv = self.value(logits);
        let mut probs = vec![R::zero(); n * c];
        let mut total = 0.0f64;
        let mut count = 0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = &lv[r * c..(r + 1) * c];
            let p = &mut probs[r * c..(r + 1) * c];
            p.copy_from_slice(row);
            let lse = softmax_in_place(p);
            total += (lse - row[t]).as_f64();
            count += 1;
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        Ok(self.push(
            vec![1],
            vec![R::lit(loss)],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).iter().copied().sum::<R>();
        self.push(vec![1], vec![s], Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = v.iter().copied().sum::<R>() / R::lit(v.len().max(1) as f64);
        self.push(vec![1], vec![s], Op::Mean { x }, &[x])
    }

    /// Concatenates `[n, c_i]` inputs along columns.
    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let n = rows_cols(self.shape(xs[0])).0;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (r, c) = rows_cols(self.shape(x));
            if r != n {
                return Err(Error::shape("concat_cols", format!("rows {r} vs {n}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&x, &c) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x)[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(vec![n, total], out, Op::ConcatCols { xs: xs.to_vec() }, xs))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(x)),
            ));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(shape, out, Op::Reshape { x }, &[x]))
    }

    /// Takes its value from `value` but passes gradients to `x` unchanged.
    pub fn straight_through(&mut self, x: NodeId, value: Vec<R>) -> Result<NodeId> {
        if value.len() != self.value(x).len() {
            return Err(Error::shape(
                "straight_through",
                format!("{:?} vs {} values", self.shape(x), value.len()),
            ));
        }
        Ok(self.push(
            self.shape(x).to_vec(),
            value,
            Op::StraightThrough { x },
            &[x],
        ))
    }

    /// Replaces each row by the mean of the rows in its group.
    /// `group_of[r]` names the group of row `r`.
    pub fn group_mean(&mut self, x: NodeId, group_of: &[usize]) -> Result<NodeId> {
        let (n, d) = rows_cols(self.shape(x));
        if group_of.len() != n {
            return Err(Error::shape(
                "group_mean",
                format!("{n} rows vs {} labels", group_of.len()),
            ));
        }
        let num_groups = group_of.iter().copied().max().map_or(0, |m| m + 1);
        let mut groups = vec![Vec::new(); num_groups];
        for (r, &g) in group_of.iter().enumerate() {
            groups[g].push(r);
        }
        let xv = self.value(x);
        let mut out = vec![R::zero(); n * d];
        let mut acc = vec![R::zero(); d];
        for members in groups.iter().filter(|m| !m.is_empty()) {
            acc.iter_mut().for_each(|a| *a = R::zero());
            for &r in members {
                add_into(&mut acc, &xv[r * d..(r + 1) * d]);
            }
            let inv = R::one() / R::lit(members.len() as f64);
            acc.iter_mut().for_each(|a| *a *= inv);
            for &r in members {
                out[r * d..(r + 1) * d].copy_from_slice(&acc);
            }
        }
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::GroupMean { x, groups },
            &[x],
        ))
    }

    /// Row `i` becomes the mean of rows `neighbors[i]` (zero when empty).
    pub fn neighbor_mean(&mut self, x: NodeId, neighbors: &[Vec<usize>]) -> Result<NodeId> {
        let (n, d) = rows_cols(self.shape(x));
        if neighbors.len() != n || neighbors.iter().flatten().any(|&j| j >= n) {
            return Err(Error::shape(
                "neighbor_mean",
                format!("{n} rows vs adjacency"),
            ));
        }
        let xv = self.value(x);
        let mut out = vec![R::zero(); n * d];
        for (i, nb) in neighbors.iter().enumerate() {
            if nb.is_empty() {
                continue;
            }
            let row = &mut out[i * d..(i + 1) * d];
            for &j in nb {
                add_into(row, &xv[j * d..(j + 1) * d]);
            }
            let inv = R::one() / R::lit(nb.len() as f64);
            row.iter_mut().for_each(|a| *a *= inv);
        }
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::NeighborMean {
                x,
                neighbors: neighbors.to_vec(),
            },
            &[x],
        ))
    }

    /// Reverse-mode pass from a single-element `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<R>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut out = Gradients::zeros_like(self.store);
        let mut grads: Vec<Option<Vec<R>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![R::one()]);

        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(node, &gy, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Vec<R>>], id: NodeId) -> Option<&'g mut Vec<R>> {
        if !self.nodes[id.0].requires_grad {
            return None;
        }
        let n = self.value(id).len();
        Some(grads[id.0].get_or_insert_with(|| vec![R::zero(); n]))
    }

    fn backward_node(
        &self,
        node: &Node<R>,
        gy: &[R],
        grads: &mut [Option<Vec<R>>],
        out: &mut Gradients<R>,
    ) {
        match &node.op {
            Op::Constant => {}
            Op::Param(p) => {
                add_into(out.slot_mut(*p, gy.len()), gy);
            }
            Op::Linear { x, w, b } => {
                let (n, k) = rows_cols(self.shape(*x));
                let m = self.shape(*w)[1];
                if let Some(gx) = self.grad_slot(grads, *x) {
                    gemm(
                        R::one(),
                        MatRef::new(gy, n, m),
                        MatRef::new(self.value(*w), k, m).t(),
                        R::one(),
                        MatMut::new(gx, n, k),
                    );
                }
                if let Some(gw) = self.grad_slot(grads, *w) {
                    gemm(
                        R::one(),
                        MatRef::new(self.value(*x), n, k).t(),
                        MatRef::new(gy, n, m),
                        R::one(),
                        MatMut::new(gw, k, m),
                    );
                }
                if let Some(b) = b {
                    if let Some(gb) = self.grad_slot(grads, *b) {
                        for row in gy.chunks_exact(m) {
                            add_into(gb, row);
                        }
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[1];
                if let Some(ga) = self.grad_slot(grads, *a) {
                    gemm(
                        R::one(),
                        MatRef::new(gy, n, m),
                        MatRef::new(self.value(*b), k, m).t(),
                        R::one(),
                        MatMut::new(ga, n, k),
                    );
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    gemm(
                        R::one(),
                        MatRef::new(self.value(*a), n, k).t(),
                        MatRef::new(gy, n, m),
                        R::one(),
                        MatMut::new(gb, k, m),
                    );
                }
            }
            Op::Add { a, b } => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    add_into(ga, gy);
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    add_into(gb, gy);
                }
            }
            Op::Mul { a, b } => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for ((g, y), v) in ga.iter_mut().zip(gy).zip(self.value(*b)) {
                        *g += *y * *v;
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *b) {
                    for ((g, y), v) in gb.iter_mut().zip(gy).zip(self.value(*a)) {
                        *g += *y * *v;
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for (g, y) in gx.iter_mut().zip(gy) {
                        *g += *y * *c;
                    }
                }
            }
            Op::Embedding { table, idx } => {
                let dim = self.shape(*table)[1];
                if let Some(gt) = self.grad_slot(grads, *table) {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut gt[i * dim..(i + 1) * dim], &gy[r * dim..(r + 1) * dim]);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (n, d) = rows_cols(self.shape(*x));
                let g = self.value(*gamma);
                if let Some(gg) = self.grad_slot(grads, *gamma) {
                    for r in 0..n {
                        for c in 0..d {
                            gg[c] += gy[r * d + c] * xhat[r * d + c];
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(grads, *beta) {
                    for row in gy.chunks_exact(d) {
                        add_into(gb, row);
                    }
                }
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let dn = R::lit(d as f64);
                    let mut dxhat = vec![R::zero(); d];
                    for r in 0..n {
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut s1 = R::zero();
                        let mut s2 = R::zero();
                        for c in 0..d {
                            dxhat[c] = gy[r * d + c] * g[c];
                            s1 += dxhat[c];
                            s2 += dxhat[c] * xh[c];
                        }
                        let (m1, m2) = (s1 / dn, s2 / dn);
                        for c in 0..d {
                            gx[r * d + c] += rstd[r] * (dxhat[c] - m1 - xh[c] * m2);
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let (c, a) = (R::lit(GELU_C), R::lit(GELU_A));
                    let half = R::lit(0.5);
                    let three = R::lit(3.0);
                    for ((g, y), &v) in gx.iter_mut().zip(gy).zip(self.value(*x)) {
                        let t = (c * (v + a * v * v * v)).tanh();
                        let dt = c * (R::one() + three * a * v * v);
                        let d = half * (R::one() + t) + half * v * (R::one() - t * t) * dt;
                        *g += *y * d;
                    }
                }
            }
            Op::Softmax { x } => {
                let (_, d) = rows_cols(self.shape(*x));
                let yv = node.value.as_ref().expect("softmax output");
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for ((gxr, gyr), yr) in gx
                        .chunks_exact_mut(d)
                        .zip(gy.chunks_exact(d))
                        .zip(yv.chunks_exact(d))
                    {
                        let dot = gyr.iter().zip(yr).map(|(a, b)| *a * *b).sum::<R>();
                        for c in 0..d {
                            gxr[c] += yr[c] * (gyr[c] - dot);
                        }
                    }
                }
            }
            Op::Attention { qkv, heads, probs } => {
                let (len, w) = rows_cols(self.shape(*qkv));
                let hidden = w / 3;
                let dh = hidden / heads;
                let scale = R::lit(1.0 / (dh as f64).sqrt());
                let qv = self.value(*qkv);
                let Some(gq) = self.grad_slot(grads, *qkv) else {
                    return;
                };
                let mut dp = vec![R::zero(); len * len];
                for h in 0..*heads {
                    let p = &probs[h * len * len..(h + 1) * len * len];
                    let go = MatRef::strided(&gy[h * dh..], len, dh, hidden, 1);
                    let v = MatRef::strided(&qv[2 * hidden + h * dh..], len, dh, w, 1);
                    // dV = Pᵀ dO
                    gemm(
                        R::one(),
                        MatRef::new(p, len, len).t(),
                        go,
                        R::one(),
                        MatMut::strided(&mut gq[2 * hidden + h * dh..], len, dh, w, 1),
                    );
                    // dP = dO Vᵀ
                    gemm(
                        R::one(),
                        go,
                        v.t(),
                        R::zero(),
                        MatMut::new(&mut dp, len, len),
                    );
                    // dS = P ⊙ (dP − rowsum(dP ⊙ P))
                    for i in 0..len {
                        let pr = &p[i * len..(i + 1) * len];
                        let dr = &mut dp[i * len..(i + 1) * len];
                        let dot = pr.iter().zip(dr.iter()).map(|(a, b)| *a * *b).sum::<R>();
                        for j in 0..len {
                            dr[j] = pr[j] * (dr[j] - dot);
                        }
                    }
                    let q = MatRef::strided(&qv[h * dh..], len, dh, w, 1);
                    let k = MatRef::strided(&qv[hidden + h * dh..], len, dh, w, 1);
                    gemm(
                        scale,
                        MatRef::new(&dp, len, len),
                        k,
                        R::one(),
                        MatMut::strided(&mut gq[h * dh..], len, dh, w, 1),
                    );
                    gemm(
                        scale,
                        MatRef::new(&dp, len, len).t(),
                        q,
                        R::one(),
                        MatMut::strided(&mut gq[hidden + h * dh..], len, dh, w, 1),
                    );
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let (_, c) = rows_cols(self.shape(*logits));
                let s = gy[0] / R::lit(*count as f64);
                if let Some(gl) = self.grad_slot(grads, *logits) {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let row = &mut gl[r * c..(r + 1) * c];
                        for (j, g) in row.iter_mut().enumerate() {
                            *g += s * probs[r * c + j];
                        }
                        row[t] -= s;
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    gx.iter_mut().for_each(|g| *g += gy[0]);
                }
            }
            Op::Mean { x } => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let s = gy[0] / R::lit(gx.len().max(1) as f64);
                    gx.iter_mut().for_each(|g| *g += s);
                }
            }
            Op::ConcatCols { xs } => {
                let n = node.shape[0];
                let total = node.shape[1];
                let mut off = 0;
                for &x in xs {
                    let c = rows_cols(self.shape(x)).1;
                    if let Some(gx) = self.grad_slot(grads, x) {
                        for r in 0..n {
                            add_into(
                                &mut gx[r * c..(r + 1) * c],
                                &gy[r * total + off..r * total + off + c],
                            );
                        }
                    }
                    off += c;
                }
            }
            Op::Reshape { x } | Op::StraightThrough { x } => {
                if let Some(gx) = self.grad_slot(grads, *x) {
                    add_into(gx, gy);
                }
            }
            Op::GroupMean { x, groups } => {
                let d = rows_cols(self.shape(*x)).1;
                if let Some(gx) = self.grad_slot(grads, *x) {
                    let mut acc = vec![R::zero(); d];
                    for members in groups.iter().filter(|m| !m.is_empty()) {
                        acc.iter_mut().for_each(|a| *a = R::zero());
                        for &r in members {
                            add_into(&mut acc, &gy[r * d..(r + 1) * d]);
                        }
                        let inv = R::one() / R::lit(members.len() as f64);
                        acc.iter_mut().for_each(|a| *a *= inv);
                        for &r in members {
                            add_into(&mut gx[r * d..(r + 1) * d], &acc);
                        }
                    }
                }
            }
            Op::NeighborMean { x, neighbors } => {
                let d = rows_cols(self.shape(*x)).1;
                if let Some(gx) = self.grad_slot(grads, *x) {
                    for (i, nb) in neighbors.iter().enumerate() {
                        if nb.is_empty() {
                            continue;
                        }
                        let inv = R::one() / R::lit(nb.len() as f64);
                        for &j in nb {
                            for c in 0..d {
                                gx[j * d + c] += gy[i * d + c] * inv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Softmax of a slice in place; returns the log-sum-exp of the input.
pub(crate) fn softmax_in_place<R: Real>(row: &mut [R]) -> R {
    let max = row.iter().copied().fold(R::neg_infinity(), R::max);
    let mut sum = R::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = R::one() / sum;
    row.iter_mut().for_each(|x| *x *= inv);
    max + sum.ln()
}
