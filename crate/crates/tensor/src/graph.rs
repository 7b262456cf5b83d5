//! Reverse-mode autodiff on a flat tape. Nodes are appended in evaluation
//! order, so the reverse sweep is just a backward scan — no explicit
//! topological sort. Gradients accumulate; a value used twice receives the
//! sum of both paths.
//!
//! Shape violations are programming errors and panic.

use std::rc::Rc;

use crate::arr::Arr;
use crate::param::Param;
use crate::Scalar;

/// Handle to a node in one [`Graph`]. Only valid for the graph that made it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Value(pub(crate) usize);

enum Op<F: Scalar> {
    Leaf,
    Param(usize),
    Add(usize, usize),
    Mul(usize, usize),
    ScalarAffine { src: usize, k: F },
    ScaleByScalar { vec: usize, scalar: usize },
    MatVec { m: usize, v: usize },
    TMatVec { m: usize, v: usize },
    Concat(Vec<usize>),
    Slice { src: usize, start: usize, len: usize },
    StackRows(Vec<usize>),
    Row { src: usize, row: usize },
    Sigmoid(usize),
    Tanh(usize),
    Ln(usize),
    Pick { src: usize, at: usize },
    Sum(usize),
    DivByScalar { vec: usize, scalar: usize },
    MulConst { src: usize, mask: Rc<Arr<F>> },
    SoftmaxMasked { scores: usize, mask: Option<Rc<Vec<bool>>> },
    SegmentMax { scores: usize, segs: Rc<Vec<Vec<usize>>> },
    SegmentSum { probs: usize, segs: Rc<Vec<Vec<usize>>> },
    EmbedRows { table: usize, ids: Rc<Vec<usize>> },
    CrossEntropy { probs: usize, target: Rc<Vec<F>> },
}

pub struct Graph<F: Scalar> {
    ops: Vec<Op<F>>,
    data: Vec<Rc<Arr<F>>>,
    grads: Vec<Option<Arr<F>>>,
    params: Vec<Param<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph {
            ops: Vec::with_capacity(1024),
            data: Vec::with_capacity(1024),
            grads: Vec::with_capacity(1024),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op<F>, data: Arr<F>) -> Value {
        self.ops.push(op);
        self.data.push(Rc::new(data));
        self.grads.push(None);
        Value(self.ops.len() - 1)
    }

    pub fn value_data(&self, v: Value) -> &Arr<F> {
        &self.data[v.0]
    }

    /// Scalar payload of a (1,1) node.
    pub fn scalar(&self, v: Value) -> F {
        let a = self.value_data(v);
        assert_eq!(a.shape(), (1, 1), "scalar() on non-scalar node");
        a.as_slice()[0]
    }

    /// Gradient accumulated at a node after `backward` (zeros if untouched).
    pub fn grad(&self, v: Value) -> Arr<F> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.data[v.0].shape();
                Arr::zeros(r, c)
            }
        }
    }

    // ---- leaves ----

    pub fn input(&mut self, a: Arr<F>) -> Value {
        self.push(Op::Leaf, a)
    }

    pub fn input_shared(&mut self, a: Rc<Arr<F>>) -> Value {
        self.ops.push(Op::Leaf);
        self.data.push(a);
        self.grads.push(None);
        Value(self.ops.len() - 1)
    }

    pub fn zeros(&mut self, n: usize) -> Value {
        self.input(Arr::zeros(n, 1))
    }

    /// Leaf bound to a parameter; backward flushes into the parameter's
    /// persistent gradient accumulator.
    pub fn param(&mut self, p: &Param<F>) -> Value {
        let snapshot = p.value_rc();
        self.params.push(p.clone());
        let idx = self.params.len() - 1;
        self.ops.push(Op::Param(idx));
        self.data.push(snapshot);
        self.grads.push(None);
        Value(self.ops.len() - 1)
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Value, b: Value) -> Value {
        let (x, y) = (&self.data[a.0], &self.data[b.0]);
        assert_eq!(x.shape(), y.shape(), "add shape mismatch");
        let mut out = (**x).clone();
        out.add_assign(y);
        self.push(Op::Add(a.0, b.0), out)
    }

    pub fn add_all(&mut self, vs: &[Value]) -> Value {
        assert!(!vs.is_empty(), "add_all of nothing");
        let mut acc = vs[0];
        for &v in &vs[1..] {
            acc = self.add(acc, v);
        }
        acc
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Value {
        let (x, y) = (&self.data[a.0], &self.data[b.0]);
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(&p, &q)| p * q)
            .collect();
        let (r, c) = x.shape();
        self.push(Op::Mul(a.0, b.0), Arr::from_data(r, c, data))
    }

    /// Elementwise `k*x + b`.
    pub fn affine(&mut self, src: Value, k: F, b: F) -> Value {
        let x = &self.data[src.0];
        let data = x.as_slice().iter().map(|&v| k * v + b).collect();
        let (r, c) = x.shape();
        self.push(Op::ScalarAffine { src: src.0, k }, Arr::from_data(r, c, data))
    }

    pub fn scale(&mut self, src: Value, k: F) -> Value {
        self.affine(src, k, F::zero())
    }

    /// Broadcast-multiply a vector by a scalar node.
    pub fn scale_by(&mut self, vec: Value, scalar: Value) -> Value {
        assert_eq!(self.data[scalar.0].shape(), (1, 1), "scale_by needs scalar");
        let s = self.data[scalar.0].as_slice()[0];
        let x = &self.data[vec.0];
        let data = x.as_slice().iter().map(|&v| v * s).collect();
        let (r, c) = x.shape();
        self.push(
            Op::ScaleByScalar {
                vec: vec.0,
                scalar: scalar.0,
            },
            Arr::from_data(r, c, data),
        )
    }

    pub fn sigmoid(&mut self, src: Value) -> Value {
        let x = &self.data[src.0];
        let one = F::one();
        let data = x
            .as_slice()
            .iter()
            .map(|&v| one / (one + (-v).exp()))
            .collect();
        let (r, c) = x.shape();
        self.push(Op::Sigmoid(src.0), Arr::from_data(r, c, data))
    }

    pub fn tanh(&mut self, src: Value) -> Value {
        let x = &self.data[src.0];
        let data = x.as_slice().iter().map(|&v| v.tanh()).collect();
        let (r, c) = x.shape();
        self.push(Op::Tanh(src.0), Arr::from_data(r, c, data))
    }

    pub fn ln(&mut self, src: Value) -> Value {
        let x = &self.data[src.0];
        let data = x.as_slice().iter().map(|&v| v.ln()).collect();
        let (r, c) = x.shape();
        self.push(Op::Ln(src.0), Arr::from_data(r, c, data))
    }

    /// Elementwise multiply by a constant array (dropout masks etc.).
    /// No gradient flows to the constant.
    pub fn mul_const(&mut self, src: Value, mask: Rc<Arr<F>>) -> Value {
        let x = &self.data[src.0];
        assert_eq!(x.shape(), mask.shape(), "mul_const shape mismatch");
        let data = x
            .as_slice()
            .iter()
            .zip(mask.as_slice())
            .map(|(&p, &q)| p * q)
            .collect();
        let (r, c) = x.shape();
        self.push(Op::MulConst { src: src.0, mask }, Arr::from_data(r, c, data))
    }

    // ---- linear algebra ----

    /// `m (r,c) · v (c,1) -> (r,1)`
    pub fn matvec(&mut self, m: Value, v: Value) -> Value {
        let (mm, vv) = (&self.data[m.0], &self.data[v.0]);
        assert!(vv.is_vector(), "matvec rhs must be a vector");
        assert_eq!(mm.cols(), vv.rows(), "matvec shape mismatch");
        let (r, c) = mm.shape();
        let x = vv.as_slice();
        let mut out = vec![F::zero(); r];
        for i in 0..r {
            let row = mm.row(i);
            let mut acc = F::zero();
            for j in 0..c {
                acc = acc + row[j] * x[j];
            }
            out[i] = acc;
        }
        self.push(Op::MatVec { m: m.0, v: v.0 }, Arr::vector(out))
    }

    /// `m (r,c)ᵀ · v (r,1) -> (c,1)`
    pub fn tmatvec(&mut self, m: Value, v: Value) -> Value {
        let (mm, vv) = (&self.data[m.0], &self.data[v.0]);
        assert!(vv.is_vector(), "tmatvec rhs must be a vector");
        assert_eq!(mm.rows(), vv.rows(), "tmatvec shape mismatch");
        let (r, c) = mm.shape();
        let x = vv.as_slice();
        let mut out = vec![F::zero(); c];
        for i in 0..r {
            let row = mm.row(i);
            let xi = x[i];
            for j in 0..c {
                out[j] = out[j] + row[j] * xi;
            }
        }
        self.push(Op::TMatVec { m: m.0, v: v.0 }, Arr::vector(out))
    }

    // ---- structure ----

    pub fn concat(&mut self, parts: &[Value]) -> Value {
        assert!(!parts.is_empty(), "concat of nothing");
        let mut data = Vec::new();
        for &p in parts {
            let a = &self.data[p.0];
            assert!(a.is_vector(), "concat expects vectors");
            data.extend_from_slice(a.as_slice());
        }
        self.push(
            Op::Concat(parts.iter().map(|p| p.0).collect()),
            Arr::vector(data),
        )
    }

    pub fn slice(&mut self, src: Value, start: usize, len: usize) -> Value {
        let a = &self.data[src.0];
        assert!(a.is_vector(), "slice expects a vector");
        assert!(start + len <= a.rows(), "slice out of bounds");
        let data = a.as_slice()[start..start + len].to_vec();
        self.push(
            Op::Slice {
                src: src.0,
                start,
                len,
            },
            Arr::vector(data),
        )
    }

    /// Stack N same-length vectors into an (N, d) matrix.
    pub fn stack_rows(&mut self, rows: &[Value]) -> Value {
        assert!(!rows.is_empty(), "stack_rows of nothing");
        let d = self.data[rows[0].0].rows();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let a = &self.data[r.0];
            assert!(a.is_vector() && a.rows() == d, "stack_rows shape mismatch");
            data.extend_from_slice(a.as_slice());
        }
        self.push(
            Op::StackRows(rows.iter().map(|r| r.0).collect()),
            Arr::from_data(rows.len(), d, data),
        )
    }

    /// Row r of an (N, d) matrix as a (d,1) vector.
    pub fn row(&mut self, src: Value, r: usize) -> Value {
        let a = &self.data[src.0];
        assert!(r < a.rows(), "row out of bounds");
        let data = a.row(r).to_vec();
        self.push(Op::Row { src: src.0, row: r }, Arr::vector(data))
    }

    pub fn pick(&mut self, src: Value, at: usize) -> Value {
        let a = &self.data[src.0];
        assert!(a.is_vector() && at < a.rows(), "pick out of bounds");
        let x = a.as_slice()[at];
        self.push(Op::Pick { src: src.0, at }, Arr::scalar(x))
    }

    pub fn sum(&mut self, src: Value) -> Value {
        let a = &self.data[src.0];
        let s = a.as_slice().iter().fold(F::zero(), |acc, &x| acc + x);
        self.push(Op::Sum(src.0), Arr::scalar(s))
    }

    pub fn div_by_scalar(&mut self, vec: Value, scalar: Value) -> Value {
        assert_eq!(self.data[scalar.0].shape(), (1, 1));
        let s = self.data[scalar.0].as_slice()[0];
        let x = &self.data[vec.0];
        let data = x.as_slice().iter().map(|&v| v / s).collect();
        let (r, c) = x.shape();
        self.push(
            Op::DivByScalar {
                vec: vec.0,
                scalar: scalar.0,
            },
            Arr::from_data(r, c, data),
        )
    }

    /// Gather rows of an embedding table: `(V, d)` + ids -> `(len, d)`.
    /// Backward scatters only into the touched rows.
    pub fn embed_rows(&mut self, table: Value, ids: Rc<Vec<usize>>) -> Value {
        let t = &self.data[table.0];
        let d = t.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids.iter() {
            assert!(id < t.rows(), "embedding id {} out of range {}", id, t.rows());
            data.extend_from_slice(t.row(id));
        }
        let n = ids.len();
        self.push(
            Op::EmbedRows { table: table.0, ids },
            Arr::from_data(n, d, data),
        )
    }

    // ---- distributions ----

    /// Numerically stable softmax over the unmasked entries; masked entries
    /// come out exactly zero. Panics when everything is masked.
    pub fn softmax_masked(&mut self, scores: Value, mask: Option<Rc<Vec<bool>>>) -> Value {
        let x = &self.data[scores.0];
        assert!(x.is_vector(), "softmax over a vector");
        if let Some(m) = &mask {
            assert_eq!(m.len(), x.rows(), "mask length mismatch");
            assert!(m.iter().any(|&b| b), "softmax with all entries masked");
        }
        let xs = x.as_slice();
        let live = |i: usize| mask.as_ref().map_or(true, |m| m[i]);
        let mut mx = F::neg_infinity();
        for (i, &v) in xs.iter().enumerate() {
            if live(i) && v > mx {
                mx = v;
            }
        }
        let mut out = vec![F::zero(); xs.len()];
        let mut total = F::zero();
        for (i, &v) in xs.iter().enumerate() {
            if live(i) {
                let e = (v - mx).exp();
                out[i] = e;
                total = total + e;
            }
        }
        for o in out.iter_mut() {
            *o = *o / total;
        }
        self.push(
            Op::SoftmaxMasked {
                scores: scores.0,
                mask,
            },
            Arr::vector(out),
        )
    }

    pub fn softmax(&mut self, scores: Value) -> Value {
        self.softmax_masked(scores, None)
    }

    /// Per-segment max of a score vector: `out[s] = max over segs[s]`.
    /// Gradient flows to the (first) argmax position of each segment.
    pub fn segment_max(&mut self, scores: Value, segs: Rc<Vec<Vec<usize>>>) -> Value {
        let x = self.data[scores.0].clone();
        let xs = x.as_slice();
        let mut out = Vec::with_capacity(segs.len());
        for seg in segs.iter() {
            assert!(!seg.is_empty(), "empty segment in segment_max");
            let mut best = xs[seg[0]];
            for &p in &seg[1..] {
                if xs[p] > best {
                    best = xs[p];
                }
            }
            out.push(best);
        }
        self.push(
            Op::SegmentMax {
                scores: scores.0,
                segs,
            },
            Arr::vector(out),
        )
    }

    /// Per-segment sum: `out[s] = Σ probs[p] for p in segs[s]`.
    pub fn segment_sum(&mut self, probs: Value, segs: Rc<Vec<Vec<usize>>>) -> Value {
        let x = self.data[probs.0].clone();
        let xs = x.as_slice();
        let mut out = Vec::with_capacity(segs.len());
        for seg in segs.iter() {
            let mut acc = F::zero();
            for &p in seg {
                acc = acc + xs[p];
            }
            out.push(acc);
        }
        self.push(
            Op::SegmentSum {
                probs: probs.0,
                segs,
            },
            Arr::vector(out),
        )
    }

    /// `-Σ_k target[k]·ln(probs[k])`, skipping zero-weight entries so masked
    /// probabilities (exact zeros) never produce NaN.
    pub fn cross_entropy(&mut self, probs: Value, target: Rc<Vec<F>>) -> Value {
        let p = &self.data[probs.0];
        assert!(p.is_vector());
        assert_eq!(p.rows(), target.len(), "cross_entropy length mismatch");
        let ps = p.as_slice();
        let mut acc = F::zero();
        for (k, &t) in target.iter().enumerate() {
            if t != F::zero() {
                acc = acc - t * ps[k].ln();
            }
        }
        self.push(
            Op::CrossEntropy {
                probs: probs.0,
                target,
            },
            Arr::scalar(acc),
        )
    }

    // ---- backward ----

    pub fn backward(&mut self, loss: Value) {
        self.backward_with(loss, F::one());
    }

    /// Backward pass seeding d(loss)/d(loss) = `seed` (lets callers average
    /// per-example losses into a batch mean without an extra node).
    pub fn backward_with(&mut self, loss: Value, seed: F) {
        assert_eq!(self.data[loss.0].shape(), (1, 1), "loss must be scalar");
        self.grads[loss.0] = Some(Arr::scalar(seed));

        for i in (0..=loss.0).rev() {
            // Take the finished gradient (all consumers have higher indices
            // and were already processed), dispatch to parents, put it back.
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let gs = g.as_slice();
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Param(k) => {
                    self.params[*k].accumulate_grad(&g);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    slot(&mut self.grads, &self.data, a).add_assign(&g);
                    slot(&mut self.grads, &self.data, b).add_assign(&g);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (xa, xb) = (self.data[a].clone(), self.data[b].clone());
                    {
                        let da = slot(&mut self.grads, &self.data, a).as_mut_slice();
                        for (k, d) in da.iter_mut().enumerate() {
                            *d = *d + gs[k] * xb.as_slice()[k];
                        }
                    }
                    let db = slot(&mut self.grads, &self.data, b).as_mut_slice();
                    for (k, d) in db.iter_mut().enumerate() {
                        *d = *d + gs[k] * xa.as_slice()[k];
                    }
                }
                Op::ScalarAffine { src, k } => {
                    let (src, k) = (*src, *k);
                    let ds = slot(&mut self.grads, &self.data, src).as_mut_slice();
                    for (j, d) in ds.iter_mut().enumerate() {
                        *d = *d + k * gs[j];
                    }
                }
                Op::ScaleByScalar { vec, scalar } => {
                    let (vec, scalar) = (*vec, *scalar);
                    let s = self.data[scalar].as_slice()[0];
                    let xv = self.data[vec].clone();
                    {
                        let dv = slot(&mut self.grads, &self.data, vec).as_mut_slice();
                        for (j, d) in dv.iter_mut().enumerate() {
                            *d = *d + s * gs[j];
                        }
                    }
                    let mut acc = F::zero();
                    for (j, &x) in xv.as_slice().iter().enumerate() {
                        acc = acc + gs[j] * x;
                    }
                    slot(&mut self.grads, &self.data, scalar).as_mut_slice()[0] += acc;
                }
                Op::MatVec { m, v } => {
                    let (m, v) = (*m, *v);
                    let mm = self.data[m].clone();
                    let xv = self.data[v].clone();
                    let (r, c) = mm.shape();
                    {
                        let dm = slot(&mut self.grads, &self.data, m);
                        for i2 in 0..r {
                            let gi = gs[i2];
                            if gi == F::zero() {
                                continue;
                            }
                            let drow = dm.row_mut(i2);
                            for (j, d) in drow.iter_mut().enumerate() {
                                *d = *d + gi * xv.as_slice()[j];
                            }
                        }
                    }
                    let dv = slot(&mut self.grads, &self.data, v).as_mut_slice();
                    for i2 in 0..r {
                        let gi = gs[i2];
                        if gi == F::zero() {
                            continue;
                        }
                        let row = mm.row(i2);
                        for j in 0..c {
                            dv[j] = dv[j] + row[j] * gi;
                        }
                    }
                }
                Op::TMatVec { m, v } => {
                    let (m, v) = (*m, *v);
                    let mm = self.data[m].clone();
                    let xv = self.data[v].clone();
                    let (r, c) = mm.shape();
                    {
                        let dm = slot(&mut self.grads, &self.data, m);
                        for i2 in 0..r {
                            let xi = xv.as_slice()[i2];
                            if xi == F::zero() {
                                continue;
                            }
                            let drow = dm.row_mut(i2);
                            for (j, d) in drow.iter_mut().enumerate() {
                                *d = *d + xi * gs[j];
                            }
                        }
                    }
                    let dv = slot(&mut self.grads, &self.data, v).as_mut_slice();
                    for i2 in 0..r {
                        let row = mm.row(i2);
                        let mut acc = F::zero();
                        for j in 0..c {
                            acc = acc + row[j] * gs[j];
                        }
                        dv[i2] = dv[i2] + acc;
                    }
                }
                Op::Concat(parts) => {
                    let parts = parts.clone();
                    let mut off = 0;
                    for p in parts {
                        let n = self.data[p].rows();
                        let dp = slot(&mut self.grads, &self.data, p).as_mut_slice();
                        for j in 0..n {
                            dp[j] = dp[j] + gs[off + j];
                        }
                        off += n;
                    }
                }
                Op::Slice { src, start, len } => {
                    let (src, start, len) = (*src, *start, *len);
                    let ds = slot(&mut self.grads, &self.data, src).as_mut_slice();
                    for j in 0..len {
                        ds[start + j] = ds[start + j] + gs[j];
                    }
                }
                Op::StackRows(rows) => {
                    let rows = rows.clone();
                    for (r2, p) in rows.into_iter().enumerate() {
                        let dp = slot(&mut self.grads, &self.data, p).as_mut_slice();
                        let grow = g.row(r2);
                        for (j, d) in dp.iter_mut().enumerate() {
                            *d = *d + grow[j];
                        }
                    }
                }
                Op::Row { src, row } => {
                    let (src, row) = (*src, *row);
                    let ds = slot(&mut self.grads, &self.data, src);
                    let drow = ds.row_mut(row);
                    for (j, d) in drow.iter_mut().enumerate() {
                        *d = *d + gs[j];
                    }
                }
                Op::Sigmoid(src) => {
                    let src = *src;
                    let y = self.data[i].clone();
                    let ds = slot(&mut self.grads, &self.data, src).as_mut_slice();
                    for (j, d) in ds.iter_mut().enumerate() {
                        let yj = y.as_slice()[j];
                        *d = *d + gs[j] * yj * (F::one() - yj);
                    }
                }
                Op::Tanh(src) => {
                    let src = *src;
                    let y = self.data[i].clone();
                    let ds = slot(&mut self.grads, &self.data, src).as_mut_slice();
                    for (j, d) in ds.iter_mut().enumerate() {
                        let yj = y.as_slice()[j];
                        *d = *d + gs[j] * (F::one() - yj * yj);
                    }
                }
                Op::Ln(src) => {
                    let src = *src;
                    let x = self.data[src].clone();
                    let ds = slot(&mut self.grads, &self.data, src).as_mut_slice();
                    for (j, d) in ds.iter_mut().enumerate() {
                        *d = *d + gs[j] / x.as_slice()[j];
                    }
                }
                Op::Pick { src, at } => {
                    let (src, at) = (*src, *at);
                    let ds = slot(&mut self.grads, &self.data, src).as_mut_slice();
                    ds[at] = ds[at] + gs[0];
                }
                Op::Sum(src) => {
                    let src = *src;
                    let ds = slot(&mut self.grads, &self.data, src).as_mut_slice();
                    for d in ds.iter_mut() {
                        *d = *d + gs[0];
                    }
                }
                Op::DivByScalar { vec, scalar } => {
                    let (vec, scalar) = (*vec, *scalar);
                    let s = self.data[scalar].as_slice()[0];
                    let y = self.data[i].clone();
                    {
                        let dv = slot(&mut self.grads, &self.data, vec).as_mut_slice();
                        for (j, d) in dv.iter_mut().enumerate() {
                            *d = *d + gs[j] / s;
                        }
                    }
                    let mut acc = F::zero();
                    for (j, &yj) in y.as_slice().iter().enumerate() {
                        acc = acc + gs[j] * yj;
                    }
                    slot(&mut self.grads, &self.data, scalar).as_mut_slice()[0] -= acc / s;
                }
                Op::MulConst { src, mask } => {
                    let src = *src;
                    let mask = mask.clone();
                    let ds = slot(&mut self.grads, &self.data, src).as_mut_slice();
                    for (j, d) in ds.iter_mut().enumerate() {
                        *d = *d + gs[j] * mask.as_slice()[j];
                    }
                }
                Op::SoftmaxMasked { scores, mask } => {
                    let scores = *scores;
                    let mask = mask.clone();
                    let y = self.data[i].clone();
                    let ys = y.as_slice();
                    let live = |j: usize| mask.as_ref().map_or(true, |m| m[j]);
                    let mut dot = F::zero();
                    for j in 0..ys.len() {
                        if live(j) {
                            dot = dot + gs[j] * ys[j];
                        }
                    }
                    let ds = slot(&mut self.grads, &self.data, scores).as_mut_slice();
                    for (j, d) in ds.iter_mut().enumerate() {
                        if live(j) {
                            *d = *d + ys[j] * (gs[j] - dot);
                        }
                    }
                }
                Op::SegmentMax { scores, segs } => {
                    let scores = *scores;
                    let segs = segs.clone();
                    let x = self.data[scores].clone();
                    let xs = x.as_slice();
                    let ds = slot(&mut self.grads, &self.data, scores).as_mut_slice();
                    for (s2, seg) in segs.iter().enumerate() {
                        let mut best = seg[0];
                        for &p in &seg[1..] {
                            if xs[p] > xs[best] {
                                best = p;
                            }
                        }
                        ds[best] = ds[best] + gs[s2];
                    }
                }
                Op::SegmentSum { probs, segs } => {
                    let probs = *probs;
                    let segs = segs.clone();
                    let dp = slot(&mut self.grads, &self.data, probs).as_mut_slice();
                    for (s2, seg) in segs.iter().enumerate() {
                        for &p in seg {
                            dp[p] = dp[p] + gs[s2];
                        }
                    }
                }
                Op::EmbedRows { table, ids } => {
                    let table = *table;
                    let ids = ids.clone();
                    let dt = slot(&mut self.grads, &self.data, table);
                    for (r2, &id) in ids.iter().enumerate() {
                        let grow = g.row(r2);
                        let drow = dt.row_mut(id);
                        for (j, d) in drow.iter_mut().enumerate() {
                            *d = *d + grow[j];
                        }
                    }
                }
                Op::CrossEntropy { probs, target } => {
                    let probs = *probs;
                    let target = target.clone();
                    let p = self.data[probs].clone();
                    let dp = slot(&mut self.grads, &self.data, probs).as_mut_slice();
                    for (k, &t) in target.iter().enumerate() {
                        if t != F::zero() {
                            dp[k] = dp[k] - gs[0] * t / p.as_slice()[k];
                        }
                    }
                }
            }
            self.grads[i] = Some(g);
        }
    }
}

fn slot<'a, F: Scalar>(
    grads: &'a mut [Option<Arr<F>>],
    data: &[Rc<Arr<F>>],
    idx: usize,
) -> &'a mut Arr<F> {
    let (r, c) = data[idx].shape();
    grads[idx].get_or_insert_with(|| Arr::zeros(r, c))
}

/// Inverted-dropout mask: kept entries carry 1/(1-rate). Sample one per
/// sequence and reuse it at every time step for the time-shared variant.
pub fn dropout_mask<F: Scalar>(n: usize, rate: f64, rng: &mut crate::rng::Rng) -> Rc<Arr<F>> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
    let keep = F::from(1.0 / (1.0 - rate)).unwrap();
    let data = (0..n)
        .map(|_| {
            if rng.bernoulli(rate) {
                F::zero()
            } else {
                keep
            }
        })
        .collect();
    Rc::new(Arr::vector(data))
}

impl<F: Scalar> Graph<F> {
    /// Fresh-mask dropout. Identity when not training or when rate is 0.
    pub fn dropout(
        &mut self,
        x: Value,
        rate: f64,
        rng: &mut crate::rng::Rng,
        training: bool,
    ) -> Value {
        if !training || rate == 0.0 {
            return x;
        }
        let n = self.value_data(x).rows();
        let mask = dropout_mask(n, rate, rng);
        self.mul_const(x, mask)
    }
}
