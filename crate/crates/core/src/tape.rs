//! Reverse-mode autodiff over a per-op tape.
//!
//! The tape owns an arena of nodes (value + optional gradient) and a list of
//! recorded operations in forward order. `backward` replays the list in
//! reverse, accumulating vector-Jacobian products into input gradients.
//! Construction guarantees topological order: an op's inputs always have
//! smaller node ids than its output.
//!
//! Every op checks its output for NaN/Inf and fails with the op name and
//! shape; nothing propagates silently.

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Handle to a node on the tape. Cheap to copy; only valid for the tape that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    grad: Option<Vec<f64>>,
}

#[derive(Clone)]
enum Op {
    Leaf,
    /// out[m,n] = a[m,k] @ b[k,n]
    Matmul { a: Var, b: Var, m: usize, k: usize, n: usize },
    /// out[n] = v[k] @ m[k,n]
    VecMat { v: Var, mat: Var, k: usize, n: usize },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    /// out = x + s (s scalar node, broadcast)
    AddScalar { x: Var, s: Var },
    /// out = x * s (s scalar node, broadcast)
    MulScalar { x: Var, s: Var },
    /// out[m,n] = a[m] outer b[n]
    Outer { a: Var, b: Var, m: usize, n: usize },
    /// contiguous range of the flat data
    Slice { x: Var, offset: usize, len: usize },
    /// column block of a 2-D node
    SliceCols { x: Var, cols: usize, start: usize, width: usize },
    Concat { parts: Vec<(Var, usize)> },
    Reshape { x: Var },
    /// out[t,:] = table[ids[t],:]
    Embed { table: Var, ids: Vec<usize>, dim: usize },
    Softplus { x: Var },
    Gelu { x: Var },
    /// softmax along `axis`, decomposed as (outer, len, inner) strides
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    /// per-row normalization to zero mean / unit variance (no scale)
    LayerNorm { x: Var, rows: usize, cols: usize, eps: f64 },
    /// out[r,c] = x[r,c] * g[c]
    MulRowBroadcast { x: Var, g: Var, rows: usize, cols: usize },
    /// scalar sum over masked rows of -log softmax(logits)[target]
    CrossEntropySum { logits: Var, targets: Vec<usize>, mask: Vec<bool>, vocab: usize },
    SumAll { x: Var },
}

pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<(usize, Op)>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite(op: &'static str, shape: &[usize], data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            op,
            shape: shape.to_vec(),
        })
    }
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            let bo = p * n;
            let oo = i * n;
            for j in 0..n {
                out[oo + j] += aip * b[bo + j];
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
            consumed: false,
        }
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.ops.clear();
        self.consumed = false;
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    fn push(&mut self, op: &'static str, shape: Vec<usize>, data: Vec<f64>, rule: Op) -> Result<Var> {
        check_finite(op, &shape, &data)?;
        let id = self.nodes.len();
        self.nodes.push(Node {
            data,
            shape,
            grad: None,
        });
        self.ops.push((id, rule));
        Ok(Var(id))
    }

    /// Register a tensor's values as a leaf node (copies the data).
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            data: t.data().to_vec(),
            shape: t.shape().to_vec(),
            grad: None,
        });
        self.ops.push((id, Op::Leaf));
        Var(id)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        if crate::tensor::numel(&shape) != data.len() {
            return Err(Error::ShapeMismatch {
                op: "constant",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        check_finite("constant", &shape, &data)?;
        let id = self.nodes.len();
        self.nodes.push(Node {
            data,
            shape,
            grad: None,
        });
        self.ops.push((id, Op::Leaf));
        Ok(Var(id))
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar value of a one-element node.
    pub fn value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    // ── ops ──────────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_kernel(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        self.push("matmul", vec![m, n], out, Op::Matmul { a, b, m, k, n })
    }

    /// Row vector times matrix: v[k] @ m[k,n] -> [n].
    pub fn vec_mat(&mut self, v: Var, mat: Var) -> Result<Var> {
        let (sv, sm) = (self.shape(v), self.shape(mat));
        if sv.len() != 1 || sm.len() != 2 || sv[0] != sm[0] {
            return Err(Error::ShapeMismatch {
                op: "vec_mat",
                lhs: sv.to_vec(),
                rhs: sm.to_vec(),
            });
        }
        let (k, n) = (sm[0], sm[1]);
        let vd = &self.nodes[v.0].data;
        let md = &self.nodes[mat.0].data;
        let mut out = vec![0.0; n];
        for p in 0..k {
            let vp = vd[p];
            let row = p * n;
            for j in 0..n {
                out[j] += vp * md[row + j];
            }
        }
        self.push("vec_mat", vec![n], out, Op::VecMat { v, mat, k, n })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push("add", shape, out, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push("mul", shape, out, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|v| c * v).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", shape, out, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.nodes[s.0].data.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "add_scalar",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(s).to_vec(),
            });
        }
        let sv = self.nodes[s.0].data[0];
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v + sv).collect();
        let shape = self.shape(x).to_vec();
        self.push("add_scalar", shape, out, Op::AddScalar { x, s })
    }

    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.nodes[s.0].data.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "mul_scalar",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(s).to_vec(),
            });
        }
        let sv = self.nodes[s.0].data[0];
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v * sv).collect();
        let shape = self.shape(x).to_vec();
        self.push("mul_scalar", shape, out, Op::MulScalar { x, s })
    }

    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 1 || sb.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "outer",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, n) = (sa[0], sb[0]);
        let ad = &self.nodes[a.0].data;
        let bd = &self.nodes[b.0].data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ai = ad[i];
            for j in 0..n {
                out[i * n + j] = ai * bd[j];
            }
        }
        self.push("outer", vec![m, n], out, Op::Outer { a, b, m, n })
    }

    /// Contiguous slice of the flat (row-major) data: a row of a matrix or a
    /// segment of a vector. The result is 1-D.
    pub fn slice(&mut self, x: Var, offset: usize, len: usize) -> Result<Var> {
        let total = self.nodes[x.0].data.len();
        if offset + len > total {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: self.shape(x).to_vec(),
                rhs: vec![offset, len],
            });
        }
        let out = self.nodes[x.0].data[offset..offset + len].to_vec();
        self.push("slice", vec![len], out, Op::Slice { x, offset, len })
    }

    /// Column block [start, start+width) of a 2-D node.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 || start + width > sx[1] {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: sx.to_vec(),
                rhs: vec![start, width],
            });
        }
        let (rows, cols) = (sx[0], sx[1]);
        let xd = &self.nodes[x.0].data;
        let mut out = vec![0.0; rows * width];
        for r in 0..rows {
            out[r * width..(r + 1) * width]
                .copy_from_slice(&xd[r * cols + start..r * cols + start + width]);
        }
        self.push(
            "slice_cols",
            vec![rows, width],
            out,
            Op::SliceCols { x, cols, start, width },
        )
    }

    /// Concatenate flat data of all parts, in order. The result is 1-D.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidConfig("concat of zero parts".into()));
        }
        let mut out = Vec::new();
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let d = &self.nodes[p.0].data;
            lens.push((p, d.len()));
            out.extend_from_slice(d);
        }
        let total = out.len();
        self.push("concat", vec![total], out, Op::Concat { parts: lens })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if crate::tensor::numel(&shape) != self.nodes[x.0].data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        let out = self.nodes[x.0].data.clone();
        self.push("reshape", shape, out, Op::Reshape { x })
    }

    /// Gather rows of an embedding table: out[t,:] = table[ids[t],:].
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embed",
                lhs: st.to_vec(),
                rhs: vec![ids.len()],
            });
        }
        let (vocab, dim) = (st[0], st[1]);
        for (position, &id) in ids.iter().enumerate() {
            if id >= vocab {
                return Err(Error::TokenOutOfRange {
                    position,
                    id,
                    vocab,
                });
            }
        }
        let td = &self.nodes[table.0].data;
        let mut out = vec![0.0; ids.len() * dim];
        for (t, &id) in ids.iter().enumerate() {
            out[t * dim..(t + 1) * dim].copy_from_slice(&td[id * dim..(id + 1) * dim]);
        }
        self.push(
            "embed",
            vec![ids.len(), dim],
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
                dim,
            },
        )
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| math::softplus(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push("softplus", shape, out, Op::Softplus { x })
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| math::gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push("gelu", shape, out, Op::Gelu { x })
    }

    /// Softmax along `axis`, with max-subtraction for stability.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                lhs: sx,
                rhs: vec![axis],
            });
        }
        let outer: usize = sx[..axis].iter().product();
        let len = sx[axis];
        let inner: usize = sx[axis + 1..].iter().product();
        let xd = &self.nodes[x.0].data;
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| (o * len + i) * inner + j;
                let mut mx = f64::NEG_INFINITY;
                for i in 0..len {
                    mx = mx.max(xd[at(i)]);
                }
                let mut sum = 0.0;
                for i in 0..len {
                    let e = (xd[at(i)] - mx).exp();
                    out[at(i)] = e;
                    sum += e;
                }
                for i in 0..len {
                    out[at(i)] /= sum;
                }
            }
        }
        self.push("softmax", sx, out, Op::Softmax { x, outer, len, inner })
    }

    /// Normalize each row of a 2-D node to zero mean and unit variance.
    /// No learned scale; compose with `mul_row_broadcast` for that.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: sx,
                rhs: vec![2],
            });
        }
        let (rows, cols) = (sx[0], sx[1]);
        let xd = &self.nodes[x.0].data;
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..cols {
                out[r * cols + c] = (row[c] - mean) * inv;
            }
        }
        self.push("layer_norm", sx, out, Op::LayerNorm { x, rows, cols, eps })
    }

    /// out[r,c] = x[r,c] * g[c]; the per-feature scale of a norm layer.
    pub fn mul_row_broadcast(&mut self, x: Var, g: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sg = self.shape(g).to_vec();
        if sx.len() != 2 || sg.len() != 1 || sg[0] != sx[1] {
            return Err(Error::ShapeMismatch {
                op: "mul_row_broadcast",
                lhs: sx,
                rhs: sg,
            });
        }
        let (rows, cols) = (sx[0], sx[1]);
        let xd = &self.nodes[x.0].data;
        let gd = &self.nodes[g.0].data;
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] = xd[r * cols + c] * gd[c];
            }
        }
        self.push("mul_row_broadcast", sx, out, Op::MulRowBroadcast { x, g, rows, cols })
    }

    /// Sum over masked rows of -log softmax(logits)[target], with a stable
    /// log-sum-exp. Returns the scalar node and the masked-row count.
    pub fn cross_entropy_sum(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<(Var, usize)> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || targets.len() != sl[0] || mask.len() != sl[0] {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: sl,
                rhs: vec![targets.len(), mask.len()],
            });
        }
        let (rows, vocab) = (sl[0], sl[1]);
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        for r in 0..rows {
            if mask[r] && targets[r] >= vocab {
                return Err(Error::TokenOutOfRange {
                    position: r,
                    id: targets[r],
                    vocab,
                });
            }
        }
        let ld = &self.nodes[logits.0].data;
        let mut total = 0.0;
        for r in 0..rows {
            if !mask[r] {
                continue;
            }
            let row = &ld[r * vocab..(r + 1) * vocab];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            total += lse - row[targets[r]];
        }
        let v = self.push(
            "cross_entropy",
            vec![1],
            vec![total],
            Op::CrossEntropySum {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                vocab,
            },
        )?;
        Ok((v, count))
    }

    /// Mean over masked positions of -log softmax(logits)[target].
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let (sum, count) = self.cross_entropy_sum(logits, targets, mask)?;
        self.scale(sum, 1.0 / count as f64)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.nodes[x.0].data.iter().sum();
        self.push("sum_all", vec![1], vec![total], Op::SumAll { x })
    }

    // ── backward ─────────────────────────────────────────────────────

    fn add_grad(&mut self, v: Var, delta: &[f64]) {
        let node = &mut self.nodes[v.0];
        let g = node.grad.get_or_insert_with(|| vec![0.0; node.data.len()]);
        for (gi, di) in g.iter_mut().zip(delta.iter()) {
            *gi += di;
        }
    }

    /// Reverse accumulation from a scalar root. Visits each recorded op
    /// exactly once, in reverse order; intermediate gradients are dropped as
    /// soon as they have been propagated. The tape is consumed; call
    /// `reset()` to reuse it.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.nodes[root.0].data.len() != 1 {
            return Err(Error::NonScalarRoot {
                shape: self.nodes[root.0].shape.clone(),
            });
        }
        self.consumed = true;
        self.nodes[root.0].grad = Some(vec![1.0]);

        let ops = std::mem::take(&mut self.ops);
        for (out_id, op) in ops.iter().rev() {
            let is_leaf = matches!(op, Op::Leaf);
            if is_leaf {
                continue;
            }
            // Take the output gradient; ops downstream of this one have all
            // been visited, so it is final. Leaves keep their gradients.
            let Some(g) = self.nodes[*out_id].grad.take() else {
                continue;
            };
            self.backward_op(*out_id, op, &g);
        }
        self.ops = ops;
        Ok(())
    }

    fn backward_op(&mut self, _out: usize, op: &Op, g: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Matmul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let ad = &self.nodes[a.0].data;
                let bd = &self.nodes[b.0].data;
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * bd[p * n + j];
                        }
                        da[i * k + p] = acc;
                    }
                }
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for i in 0..m {
                        let aip = ad[i * k + p];
                        for j in 0..n {
                            db[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
                self.add_grad(*a, &da);
                self.add_grad(*b, &db);
            }
            Op::VecMat { v, mat, k, n } => {
                let (k, n) = (*k, *n);
                let vd = &self.nodes[v.0].data;
                let md = &self.nodes[mat.0].data;
                let mut dv = vec![0.0; k];
                let mut dm = vec![0.0; k * n];
                for p in 0..k {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += g[j] * md[p * n + j];
                        dm[p * n + j] = vd[p] * g[j];
                    }
                    dv[p] = acc;
                }
                self.add_grad(*v, &dv);
                self.add_grad(*mat, &dm);
            }
            Op::Add { a, b } => {
                self.add_grad(*a, g);
                self.add_grad(*b, g);
            }
            Op::Mul { a, b } => {
                let da: Vec<f64> = g.iter().zip(&self.nodes[b.0].data).map(|(gi, bi)| gi * bi).collect();
                let db: Vec<f64> = g.iter().zip(&self.nodes[a.0].data).map(|(gi, ai)| gi * ai).collect();
                self.add_grad(*a, &da);
                self.add_grad(*b, &db);
            }
            Op::Scale { x, c } => {
                let dx: Vec<f64> = g.iter().map(|gi| c * gi).collect();
                self.add_grad(*x, &dx);
            }
            Op::AddScalar { x, s } => {
                self.add_grad(*x, g);
                self.add_grad(*s, &[g.iter().sum()]);
            }
            Op::MulScalar { x, s } => {
                let sv = self.nodes[s.0].data[0];
                let dx: Vec<f64> = g.iter().map(|gi| sv * gi).collect();
                let ds: f64 = g.iter().zip(&self.nodes[x.0].data).map(|(gi, xi)| gi * xi).sum();
                self.add_grad(*x, &dx);
                self.add_grad(*s, &[ds]);
            }
            Op::Outer { a, b, m, n } => {
                let (m, n) = (*m, *n);
                let ad = &self.nodes[a.0].data;
                let bd = &self.nodes[b.0].data;
                let mut da = vec![0.0; m];
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        da[i] += g[i * n + j] * bd[j];
                        db[j] += g[i * n + j] * ad[i];
                    }
                }
                self.add_grad(*a, &da);
                self.add_grad(*b, &db);
            }
            Op::Slice { x, offset, len } => {
                let mut dx = vec![0.0; self.nodes[x.0].data.len()];
                dx[*offset..*offset + *len].copy_from_slice(g);
                self.add_grad(*x, &dx);
            }
            Op::SliceCols { x, cols, start, width } => {
                let mut dx = vec![0.0; self.nodes[x.0].data.len()];
                let rows = dx.len() / cols;
                for r in 0..rows {
                    for j in 0..*width {
                        dx[r * cols + start + j] = g[r * width + j];
                    }
                }
                self.add_grad(*x, &dx);
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for (p, len) in parts {
                    let dp = g[offset..offset + len].to_vec();
                    self.add_grad(*p, &dp);
                    offset += len;
                }
            }
            Op::Reshape { x } => {
                self.add_grad(*x, g);
            }
            Op::Embed { table, ids, dim } => {
                let mut dt = vec![0.0; self.nodes[table.0].data.len()];
                for (t, &id) in ids.iter().enumerate() {
                    for c in 0..*dim {
                        dt[id * dim + c] += g[t * dim + c];
                    }
                }
                self.add_grad(*table, &dt);
            }
            Op::Softplus { x } => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[x.0].data)
                    .map(|(gi, &xi)| gi * math::sigmoid(xi))
                    .collect();
                self.add_grad(*x, &dx);
            }
            Op::Gelu { x } => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(&self.nodes[x.0].data)
                    .map(|(gi, &xi)| gi * math::gelu_grad(xi))
                    .collect();
                self.add_grad(*x, &dx);
            }
            Op::Softmax { x, outer, len, inner } => {
                let y = &self.nodes[_out].data;
                let mut dx = vec![0.0; y.len()];
                for o in 0..*outer {
                    for j in 0..*inner {
                        let at = |i: usize| (o * len + i) * inner + j;
                        let mut dot = 0.0;
                        for i in 0..*len {
                            dot += g[at(i)] * y[at(i)];
                        }
                        for i in 0..*len {
                            dx[at(i)] = y[at(i)] * (g[at(i)] - dot);
                        }
                    }
                }
                self.add_grad(*x, &dx);
            }
            Op::LayerNorm { x, rows, cols, eps } => {
                let xd = &self.nodes[x.0].data;
                let cols_f = *cols as f64;
                let mut dx = vec![0.0; xd.len()];
                for r in 0..*rows {
                    let row = &xd[r * cols..(r + 1) * cols];
                    let mean = row.iter().sum::<f64>() / cols_f;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols_f;
                    let inv = 1.0 / (var + eps).sqrt();
                    let gr = &g[r * cols..(r + 1) * cols];
                    let g_mean = gr.iter().sum::<f64>() / cols_f;
                    let mut gx_mean = 0.0;
                    for c in 0..*cols {
                        gx_mean += gr[c] * (row[c] - mean) * inv;
                    }
                    gx_mean /= cols_f;
                    for c in 0..*cols {
                        let xhat = (row[c] - mean) * inv;
                        dx[r * cols + c] = (gr[c] - g_mean - xhat * gx_mean) * inv;
                    }
                }
                self.add_grad(*x, &dx);
            }
            Op::MulRowBroadcast { x, g: gv, rows, cols } => {
                let xd = &self.nodes[x.0].data;
                let gvd = &self.nodes[gv.0].data;
                let mut dx = vec![0.0; xd.len()];
                let mut dg = vec![0.0; gvd.len()];
                for r in 0..*rows {
                    for c in 0..*cols {
                        dx[r * cols + c] = g[r * cols + c] * gvd[c];
                        dg[c] += g[r * cols + c] * xd[r * cols + c];
                    }
                }
                self.add_grad(*x, &dx);
                self.add_grad(*gv, &dg);
            }
            Op::CrossEntropySum { logits, targets, mask, vocab } => {
                let s = g[0];
                let ld = &self.nodes[logits.0].data;
                let mut dl = vec![0.0; ld.len()];
                for (r, &masked) in mask.iter().enumerate() {
                    if !masked {
                        continue;
                    }
                    let row = &ld[r * vocab..(r + 1) * vocab];
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for (c, &v) in row.iter().enumerate() {
                        let e = (v - mx).exp();
                        dl[r * vocab + c] = e;
                        sum += e;
                    }
                    for c in 0..*vocab {
                        dl[r * vocab + c] = s * (dl[r * vocab + c] / sum);
                    }
                    dl[r * vocab + targets[r]] -= s;
                }
                self.add_grad(*logits, &dl);
            }
            Op::SumAll { x } => {
                let dx = vec![g[0]; self.nodes[x.0].data.len()];
                self.add_grad(*x, &dx);
            }
        }
    }
}
