use std::cell::RefCell;
use std::rc::Rc;

use super::kernels::{gemm, mish_grad, mish_scalar, sigmoid_scalar};
use super::Tensor;
use crate::error::{Error, Result};

type Index = Rc<[usize]>;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias {
        x: usize,
        b: usize,
    },
    Scale(usize, f64),
    Concat {
        parts: Vec<usize>,
        outer: usize,
        widths: Vec<usize>,
    },
    SliceRows {
        x: usize,
        offset: usize,
    },
    GatherRows {
        x: usize,
        idx: Index,
        width: usize,
    },
    SegmentSum {
        x: usize,
        ids: Index,
        width: usize,
    },
    SegmentSoftmax {
        x: usize,
        ids: Index,
    },
    RowDot {
        a: usize,
        b: usize,
        cols: usize,
    },
    MulRows {
        x: usize,
        s: usize,
        cols: usize,
    },
    PairDot {
        a: usize,
        ia: Index,
        b: usize,
        ib: Index,
        cols: usize,
    },
    GatherWeightedSum {
        x: usize,
        idx: Index,
        w: usize,
        seg: Index,
        cols: usize,
    },
    BatchedMatVec {
        mats: usize,
        vecs: usize,
        index: Option<Index>,
        p: usize,
        q: usize,
    },
    Mish(usize),
    Sigmoid(usize),
    LeakyRelu(usize, f64),
    Abs(usize),
    Glu {
        x: usize,
        half: usize,
    },
    Conv1dTime {
        x: usize,
        kernel: usize,
        t_out: usize,
        n: usize,
        cin: usize,
        cout: usize,
        k: usize,
    },
    Reshape(usize),
    Sum(usize),
    SumSquares(usize),
    LogSoftmax(usize),
    SegmentLogSoftmax {
        x: usize,
        ids: Index,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Records operations in execution order for one forward pass.
///
/// Node ids are assigned sequentially, so every node's inputs precede it and
/// [`Tape::backward`] walks the list in exact reverse recording order.
/// A tape is single-threaded and supports first-order gradients only.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradient buffers produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `v`'s shape when the loss does not
    /// depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.value().shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a leaf that receives a gradient.
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, true)
    }

    /// Registers a leaf that is treated as a constant.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse-mode sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(
            std::ptr::eq(loss.tape, self),
            "loss belongs to another tape"
        );
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!(
                    "loss must hold one element, got shape {:?}",
                    nodes[loss.id].value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| {
                g.filter(|_| n.needs_grad).map(|data| Tensor {
                    shape: n.value.shape().to_vec(),
                    data,
                })
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Rows of each matrix under a batched-matvec index, ascending.
fn row_groups(index: &[usize], mats: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); mats];
    for (r, &m) in index.iter().enumerate() {
        groups[m].push(r);
    }
    groups
}

fn gather(data: &[f64], rows: &[usize], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        out.extend_from_slice(&data[r * width..(r + 1) * width]);
    }
    out
}

fn acc<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: usize,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].needs_grad {
        return None;
    }
    let n = nodes[id].value.numel();
    Some(grads[id].get_or_insert_with(|| vec![0.0; n]))
}

fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |i: usize| nodes[i].value.data();
    let out = nodes[id].value.data();
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::MatMul { a, b, m, k, n } => {
            if let Some(da) = acc(grads, nodes, a) {
                gemm(m, n, k, g, false, val(b), true, 1.0, da);
            }
            if let Some(db) = acc(grads, nodes, b) {
                gemm(k, m, n, val(a), true, g, false, 1.0, db);
            }
        }
        &Op::Linear { x, w, b, m, k, n } => {
            if let Some(dx) = acc(grads, nodes, x) {
                gemm(m, n, k, g, false, val(w), false, 1.0, dx);
            }
            if let Some(dw) = acc(grads, nodes, w) {
                gemm(n, m, k, g, true, val(x), false, 1.0, dw);
            }
            if let (Some(b), true) = (b, n > 0) {
                if let Some(db) = acc(grads, nodes, b) {
                    for row in g.chunks_exact(n) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                }
            }
        }
        &Op::Add(a, b) => {
            for i in [a, b] {
                if let Some(d) = acc(grads, nodes, i) {
                    d.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
        }
        &Op::Sub(a, b) => {
            if let Some(d) = acc(grads, nodes, a) {
                d.iter_mut().zip(g).for_each(|(d, v)| *d += v);
            }
            if let Some(d) = acc(grads, nodes, b) {
                d.iter_mut().zip(g).for_each(|(d, v)| *d -= v);
            }
        }
        &Op::Mul(a, b) => {
            if let Some(d) = acc(grads, nodes, a) {
                for ((d, gv), bv) in d.iter_mut().zip(g).zip(val(b)) {
                    *d += gv * bv;
                }
            }
            if let Some(d) = acc(grads, nodes, b) {
                for ((d, gv), av) in d.iter_mut().zip(g).zip(val(a)) {
                    *d += gv * av;
                }
            }
        }
        &Op::AddBias { x, b } => {
            if let Some(d) = acc(grads, nodes, x) {
                d.iter_mut().zip(g).for_each(|(d, v)| *d += v);
            }
            if let Some(db) = acc(grads, nodes, b) {
                let n = db.len();
                if n > 0 {
                    for row in g.chunks_exact(n) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                }
            }
        }
        &Op::Scale(x, s) => {
            if let Some(d) = acc(grads, nodes, x) {
                d.iter_mut().zip(g).for_each(|(d, v)| *d += s * v);
            }
        }
        Op::Concat {
            parts,
            outer,
            widths,
        } => {
            let total: usize = widths.iter().sum();
            let mut start = 0;
            for (&p, &w) in parts.iter().zip(widths) {
                if let Some(d) = acc(grads, nodes, p) {
                    for o in 0..*outer {
                        let src = &g[o * total + start..o * total + start + w];
                        d[o * w..(o + 1) * w]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, v)| *d += v);
                    }
                }
                start += w;
            }
        }
        &Op::SliceRows { x, offset } => {
            if let Some(d) = acc(grads, nodes, x) {
                d[offset..offset + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, v)| *d += v);
            }
        }
        Op::GatherRows { x, idx, width } => {
            let w = *width;
            if let Some(d) = acc(grads, nodes, *x) {
                for (r, &src) in idx.iter().enumerate() {
                    d[src * w..(src + 1) * w]
                        .iter_mut()
                        .zip(&g[r * w..(r + 1) * w])
                        .for_each(|(d, v)| *d += v);
                }
            }
        }
        Op::SegmentSum { x, ids, width } => {
            let w = *width;
            if let Some(d) = acc(grads, nodes, *x) {
                for (r, &s) in ids.iter().enumerate() {
                    d[r * w..(r + 1) * w]
                        .iter_mut()
                        .zip(&g[s * w..(s + 1) * w])
                        .for_each(|(d, v)| *d += v);
                }
            }
        }
        Op::SegmentSoftmax { x, ids } => {
            if let Some(d) = acc(grads, nodes, *x) {
                let nseg = ids.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; nseg];
                for (i, &s) in ids.iter().enumerate() {
                    dot[s] += out[i] * g[i];
                }
                for (i, &s) in ids.iter().enumerate() {
                    d[i] += out[i] * (g[i] - dot[s]);
                }
            }
        }
        &Op::RowDot { a, b, cols } => {
            for (this, other) in [(a, b), (b, a)] {
                if let Some(d) = acc(grads, nodes, this) {
                    let ov = val(other);
                    for (r, gv) in g.iter().enumerate() {
                        d[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .zip(&ov[r * cols..(r + 1) * cols])
                            .for_each(|(d, o)| *d += gv * o);
                    }
                }
            }
        }
        &Op::MulRows { x, s, cols } => {
            if let Some(d) = acc(grads, nodes, x) {
                let sv = val(s);
                for (r, &sr) in sv.iter().enumerate() {
                    d[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(&g[r * cols..(r + 1) * cols])
                        .for_each(|(d, v)| *d += sr * v);
                }
            }
            if let Some(d) = acc(grads, nodes, s) {
                let xv = val(x);
                for (r, dr) in d.iter_mut().enumerate() {
                    *dr += g[r * cols..(r + 1) * cols]
                        .iter()
                        .zip(&xv[r * cols..(r + 1) * cols])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
            }
        }
        Op::PairDot { a, ia, b, ib, cols } => {
            let c = *cols;
            for (this, ti, other, oi) in [(*a, ia, *b, ib), (*b, ib, *a, ia)] {
                if let Some(d) = acc(grads, nodes, this) {
                    let ov = val(other);
                    for ((gv, &t), &o) in g.iter().zip(ti.iter()).zip(oi.iter()) {
                        d[t * c..(t + 1) * c]
                            .iter_mut()
                            .zip(&ov[o * c..(o + 1) * c])
                            .for_each(|(d, o)| *d += gv * o);
                    }
                }
            }
        }
        Op::GatherWeightedSum {
            x,
            idx,
            w,
            seg,
            cols,
        } => {
            let c = *cols;
            if let Some(d) = acc(grads, nodes, *x) {
                let wv = val(*w);
                for ((&i, &s), wp) in idx.iter().zip(seg.iter()).zip(wv) {
                    d[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&g[s * c..(s + 1) * c])
                        .for_each(|(d, v)| *d += wp * v);
                }
            }
            if let Some(d) = acc(grads, nodes, *w) {
                let xv = val(*x);
                for ((dp, &i), &s) in d.iter_mut().zip(idx.iter()).zip(seg.iter()) {
                    *dp += g[s * c..(s + 1) * c]
                        .iter()
                        .zip(&xv[i * c..(i + 1) * c])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
            }
        }
        Op::BatchedMatVec {
            mats,
            vecs,
            index,
            p,
            q,
        } => {
            let (p, q) = (*p, *q);
            let pq = p * q;
            let rows = g.len() / p.max(1);
            if let (Some(ix), true) = (index, p > 0) {
                let mv = val(*mats);
                let groups = row_groups(ix, mv.len() / pq.max(1));
                let needs_m = nodes[*mats].needs_grad;
                let needs_v = nodes[*vecs].needs_grad;
                for (m, group) in groups.iter().enumerate() {
                    if group.is_empty() {
                        continue;
                    }
                    let gg = gather(g, group, p);
                    if needs_m {
                        let v = gather(val(*vecs), group, q);
                        let d = acc(grads, nodes, *mats).expect("needs grad");
                        gemm(
                            p,
                            group.len(),
                            q,
                            &gg,
                            true,
                            &v,
                            false,
                            1.0,
                            &mut d[m * pq..(m + 1) * pq],
                        );
                    }
                    if needs_v {
                        let mut dv = vec![0.0; group.len() * q];
                        gemm(
                            group.len(),
                            p,
                            q,
                            &gg,
                            false,
                            &mv[m * pq..(m + 1) * pq],
                            false,
                            0.0,
                            &mut dv,
                        );
                        let d = acc(grads, nodes, *vecs).expect("needs grad");
                        for (&r, row) in group.iter().zip(dv.chunks_exact(q.max(1))) {
                            d[r * q..(r + 1) * q]
                                .iter_mut()
                                .zip(row)
                                .for_each(|(d, v)| *d += v);
                        }
                    }
                }
                return;
            }
            let mrow = |r: usize| index.as_ref().map_or(r, |ix| ix[r]);
            if let Some(d) = acc(grads, nodes, *mats) {
                let vv = val(*vecs);
                for r in 0..rows {
                    let base = mrow(r) * pq;
                    let v = &vv[r * q..(r + 1) * q];
                    for i in 0..p {
                        let gi = g[r * p + i];
                        d[base + i * q..base + (i + 1) * q]
                            .iter_mut()
                            .zip(v)
                            .for_each(|(d, x)| *d += gi * x);
                    }
                }
            }
            if let Some(d) = acc(grads, nodes, *vecs) {
                let mv = val(*mats);
                for r in 0..rows {
                    let base = mrow(r) * pq;
                    let dr = &mut d[r * q..(r + 1) * q];
                    for i in 0..p {
                        let gi = g[r * p + i];
                        dr.iter_mut()
                            .zip(&mv[base + i * q..base + (i + 1) * q])
                            .for_each(|(d, m)| *d += gi * m);
                    }
                }
            }
        }
        &Op::Mish(x) => {
            if let Some(d) = acc(grads, nodes, x) {
                for ((d, gv), xv) in d.iter_mut().zip(g).zip(val(x)) {
                    *d += gv * mish_grad(*xv);
                }
            }
        }
        &Op::Sigmoid(x) => {
            if let Some(d) = acc(grads, nodes, x) {
                for ((d, gv), y) in d.iter_mut().zip(g).zip(out) {
                    *d += gv * y * (1.0 - y);
                }
            }
        }
        &Op::LeakyRelu(x, slope) => {
            if let Some(d) = acc(grads, nodes, x) {
                for ((d, gv), xv) in d.iter_mut().zip(g).zip(val(x)) {
                    *d += if *xv >= 0.0 { *gv } else { slope * gv };
                }
            }
        }
        &Op::Abs(x) => {
            if let Some(d) = acc(grads, nodes, x) {
                for ((d, gv), xv) in d.iter_mut().zip(g).zip(val(x)) {
                    *d += gv
                        * if *xv > 0.0 {
                            1.0
                        } else if *xv < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                }
            }
        }
        &Op::Glu { x, half } => {
            if let Some(d) = acc(grads, nodes, x) {
                let xv = val(x);
                let rows = g.len() / half.max(1);
                for r in 0..rows {
                    for j in 0..half {
                        let a = xv[r * 2 * half + j];
                        let s = sigmoid_scalar(xv[r * 2 * half + half + j]);
                        let gv = g[r * half + j];
                        d[r * 2 * half + j] += gv * s;
                        d[r * 2 * half + half + j] += gv * a * s * (1.0 - s);
                    }
                }
            }
        }
        &Op::Conv1dTime {
            x,
            kernel,
            t_out,
            n,
            cin,
            cout,
            k,
        } => {
            let rows = t_out * n;
            let block = n * cin;
            if let Some(d) = acc(grads, nodes, x) {
                let kv = val(kernel);
                for s in 0..k {
                    let dx = &mut d[s * block..s * block + rows * cin];
                    let kk = &kv[s * cin * cout..(s + 1) * cin * cout];
                    gemm(rows, cout, cin, g, false, kk, true, 1.0, dx);
                }
            }
            if let Some(d) = acc(grads, nodes, kernel) {
                let xv = val(x);
                for s in 0..k {
                    let xs = &xv[s * block..s * block + rows * cin];
                    let dk = &mut d[s * cin * cout..(s + 1) * cin * cout];
                    gemm(cin, rows, cout, xs, true, g, false, 1.0, dk);
                }
            }
        }
        &Op::Reshape(x) => {
            if let Some(d) = acc(grads, nodes, x) {
                d.iter_mut().zip(g).for_each(|(d, v)| *d += v);
            }
        }
        &Op::Sum(x) => {
            if let Some(d) = acc(grads, nodes, x) {
                d.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        &Op::SumSquares(x) => {
            if let Some(d) = acc(grads, nodes, x) {
                for (d, xv) in d.iter_mut().zip(val(x)) {
                    *d += 2.0 * xv * g[0];
                }
            }
        }
        &Op::LogSoftmax(x) => {
            if let Some(d) = acc(grads, nodes, x) {
                let gsum: f64 = g.iter().sum();
                for ((d, gv), y) in d.iter_mut().zip(g).zip(out) {
                    *d += gv - y.exp() * gsum;
                }
            }
        }
        Op::SegmentLogSoftmax { x, ids } => {
            if let Some(d) = acc(grads, nodes, *x) {
                let nseg = ids.iter().max().map_or(0, |m| m + 1);
                let mut gsum = vec![0.0; nseg];
                for (gv, &s) in g.iter().zip(ids.iter()) {
                    gsum[s] += gv;
                }
                for (i, &s) in ids.iter().enumerate() {
                    d[i] += g[i] - out[i].exp() * gsum[s];
                }
            }
        }
    }
}

fn unary<'t>(v: Var<'t>, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
    let x = v.value();
    let out = x.map(f);
    v.tape.push(out, op, v.needs_grad())
}

fn same_tape(a: &Var<'_>, b: &Var<'_>) {
    assert!(std::ptr::eq(a.tape, b.tape), "vars from different tapes");
}

/// Concatenates `parts` along `axis`. Every other axis must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat", "no parts"))?;
    let tape = first.tape;
    let base = first.shape();
    if axis >= base.len() {
        return Err(Error::invalid(
            "concat",
            format!("axis {axis} out of range for shape {base:?}"),
        ));
    }
    let values: Vec<Rc<Tensor>> = parts
        .iter()
        .map(|p| {
            same_tape(first, p);
            p.value()
        })
        .collect();
    let mut axis_len = 0;
    for v in &values {
        let s = v.shape();
        let compatible = s.len() == base.len()
            && s.iter()
                .zip(&base)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::shape("concat", &base, s));
        }
        axis_len += s[axis];
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let widths: Vec<usize> = values.iter().map(|v| v.shape()[axis] * inner).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(outer * total);
    for o in 0..outer {
        for (v, &w) in values.iter().zip(&widths) {
            data.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = base.clone();
    shape[axis] = axis_len;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let needs = tape.needs(&ids);
    Ok(tape.push(
        Tensor { shape, data },
        Op::Concat {
            parts: ids,
            outer,
            widths,
        },
        needs,
    ))
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    /// Matrix product of `[m x k]` and `[k x n]`.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        same_tape(self, other);
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut data = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut data);
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::MatMul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
            needs,
        ))
    }

    /// Affine map `x * W^T + b` applied to every row, with `W` stored
    /// `[out x in]`.
    pub fn linear(&self, w: &Var<'t>, b: Option<&Var<'t>>) -> Result<Var<'t>> {
        same_tape(self, w);
        let (x, wv) = (self.value(), w.value());
        let k = x.cols();
        if wv.shape().len() != 2 || wv.shape()[1] != k {
            return Err(Error::shape("linear", x.shape(), wv.shape()));
        }
        let n = wv.shape()[0];
        let m = x.rows();
        let mut data = vec![0.0; m * n];
        if let Some(b) = b {
            same_tape(self, b);
            let bv = b.value();
            if bv.numel() != n {
                return Err(Error::shape("linear bias", wv.shape(), bv.shape()));
            }
            if n > 0 {
                for row in data.chunks_exact_mut(n) {
                    row.copy_from_slice(bv.data());
                }
            }
        }
        gemm(m, k, n, x.data(), false, wv.data(), true, 1.0, &mut data);
        let mut shape = x.shape().to_vec();
        if shape.is_empty() {
            shape.push(n);
        } else {
            *shape.last_mut().unwrap() = n;
        }
        let mut ids = vec![self.id, w.id];
        ids.extend(b.map(|b| b.id));
        let needs = self.tape.needs(&ids);
        Ok(self.tape.push(
            Tensor { shape, data },
            Op::Linear {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                m,
                k,
                n,
            },
            needs,
        ))
    }

    fn zip_with(
        &self,
        other: &Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        same_tape(self, other);
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::shape(name, a.shape(), b.shape()));
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(
            Tensor {
                shape: a.shape().to_vec(),
                data,
            },
            op,
            needs,
        ))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.zip_with(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.zip_with(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.zip_with(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    /// Adds a length-`n` bias to every row of an `[.., n]` tensor.
    pub fn add_bias(&self, bias: &Var<'t>) -> Result<Var<'t>> {
        same_tape(self, bias);
        let (x, b) = (self.value(), bias.value());
        let n = x.cols();
        if b.numel() != n {
            return Err(Error::shape("add_bias", x.shape(), b.shape()));
        }
        let mut data = x.data().to_vec();
        if n > 0 {
            for row in data.chunks_exact_mut(n) {
                row.iter_mut().zip(b.data()).for_each(|(r, v)| *r += v);
            }
        }
        let needs = self.tape.needs(&[self.id, bias.id]);
        Ok(self.tape.push(
            Tensor {
                shape: x.shape().to_vec(),
                data,
            },
            Op::AddBias {
                x: self.id,
                b: bias.id,
            },
            needs,
        ))
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        unary(*self, |x| s * x, Op::Scale(self.id, s))
    }

    /// Rows `start..start + len` along the first axis.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape();
        let rows = shape.first().copied().unwrap_or(0);
        if start + len > rows {
            return Err(Error::invalid(
                "slice_rows",
                format!(
                    "rows {start}..{} out of range for shape {shape:?}",
                    start + len
                ),
            ));
        }
        let inner: usize = shape[1..].iter().product();
        let data = x.data()[start * inner..(start + len) * inner].to_vec();
        let mut out_shape = shape.to_vec();
        out_shape[0] = len;
        Ok(self.tape.push(
            Tensor {
                shape: out_shape,
                data,
            },
            Op::SliceRows {
                x: self.id,
                offset: start * inner,
            },
            self.needs_grad(),
        ))
    }

    /// Selects rows (first-axis entries) by index; indices may repeat.
    pub fn gather_rows(&self, idx: Index) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape();
        let rows = shape.first().copied().unwrap_or(0);
        let width: usize = shape[1..].iter().product();
        let mut data = Vec::with_capacity(idx.len() * width);
        for &i in idx.iter() {
            if i >= rows {
                return Err(Error::invalid(
                    "gather_rows",
                    format!("index {i} out of range for {rows} rows"),
                ));
            }
            data.extend_from_slice(&x.data()[i * width..(i + 1) * width]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[0] = idx.len();
        Ok(self.tape.push(
            Tensor {
                shape: out_shape,
                data,
            },
            Op::GatherRows {
                x: self.id,
                idx,
                width,
            },
            self.needs_grad(),
        ))
    }

    /// Sums first-axis rows into `num_segments` buckets. Rows are
    /// accumulated in ascending row order; empty buckets stay zero.
    pub fn segment_sum(&self, ids: Index, num_segments: usize) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape();
        let rows = shape.first().copied().unwrap_or(0);
        if ids.len() != rows {
            return Err(Error::invalid(
                "segment_sum",
                format!("{} segment ids for {rows} rows", ids.len()),
            ));
        }
        let width: usize = shape[1..].iter().product();
        let mut data = vec![0.0; num_segments * width];
        for (r, &s) in ids.iter().enumerate() {
            if s >= num_segments {
                return Err(Error::invalid(
                    "segment_sum",
                    format!("segment id {s} out of range for {num_segments} segments"),
                ));
            }
            data[s * width..(s + 1) * width]
                .iter_mut()
                .zip(&x.data()[r * width..(r + 1) * width])
                .for_each(|(d, v)| *d += v);
        }
        let mut out_shape = shape.to_vec();
        if out_shape.is_empty() {
            out_shape.push(num_segments);
        } else {
            out_shape[0] = num_segments;
        }
        Ok(self.tape.push(
            Tensor {
                shape: out_shape,
                data,
            },
            Op::SegmentSum {
                x: self.id,
                ids,
                width,
            },
            self.needs_grad(),
        ))
    }

    /// Softmax of scores within each segment. Input holds one score per
    /// entry (`[E]` or `[E x 1]`).
    pub fn segment_softmax(&self, ids: Index) -> Result<Var<'t>> {
        let x = self.value();
        if ids.len() != x.numel() || (x.shape().len() > 1 && x.cols() != 1) {
            return Err(Error::invalid(
                "segment_softmax",
                format!("{} ids for scores of shape {:?}", ids.len(), x.shape()),
            ));
        }
        let nseg = ids.iter().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; nseg];
        for (v, &s) in x.data().iter().zip(ids.iter()) {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "segment_softmax scores".into(),
                });
            }
            max[s] = max[s].max(*v);
        }
        let mut data: Vec<f64> = x
            .data()
            .iter()
            .zip(ids.iter())
            .map(|(v, &s)| (v - max[s]).exp())
            .collect();
        let mut denom = vec![0.0; nseg];
        for (v, &s) in data.iter().zip(ids.iter()) {
            denom[s] += v;
        }
        for (v, &s) in data.iter_mut().zip(ids.iter()) {
            *v /= denom[s];
        }
        Ok(self.tape.push(
            Tensor {
                shape: x.shape().to_vec(),
                data,
            },
            Op::SegmentSoftmax { x: self.id, ids },
            self.needs_grad(),
        ))
    }

    /// Per-row inner product of two `[m x c]` tensors, giving `[m x 1]`.
    pub fn row_dot(&self, other: &Var<'t>) -> Result<Var<'t>> {
        same_tape(self, other);
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::shape("row_dot", a.shape(), b.shape()));
        }
        let (m, c) = (a.rows(), a.cols());
        let data = (0..m)
            .map(|r| {
                a.data()[r * c..(r + 1) * c]
                    .iter()
                    .zip(&b.data()[r * c..(r + 1) * c])
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(
            Tensor {
                shape: vec![m, 1],
                data,
            },
            Op::RowDot {
                a: self.id,
                b: other.id,
                cols: c,
            },
            needs,
        ))
    }

    /// Scales row `r` of an `[m x c]` tensor by `s[r]`.
    pub fn mul_rows(&self, s: &Var<'t>) -> Result<Var<'t>> {
        same_tape(self, s);
        let (x, sv) = (self.value(), s.value());
        let (m, c) = (x.rows(), x.cols());
        if sv.numel() != m {
            return Err(Error::shape("mul_rows", x.shape(), sv.shape()));
        }
        let mut data = x.data().to_vec();
        if c > 0 {
            for (row, k) in data.chunks_exact_mut(c).zip(sv.data()) {
                row.iter_mut().for_each(|v| *v *= k);
            }
        }
        let needs = self.tape.needs(&[self.id, s.id]);
        Ok(self.tape.push(
            Tensor {
                shape: x.shape().to_vec(),
                data,
            },
            Op::MulRows {
                x: self.id,
                s: s.id,
                cols: c,
            },
            needs,
        ))
    }

    /// Inner products of selected row pairs: entry `p` is
    /// `self[ia[p]] . other[ib[p]]`, giving `[P x 1]`. Equal to gathering
    /// both sides and taking [`Var::row_dot`], without the gathered copies.
    pub fn pair_dot(&self, ia: Index, other: &Var<'t>, ib: Index) -> Result<Var<'t>> {
        same_tape(self, other);
        let (a, b) = (self.value(), other.value());
        let c = a.cols();
        if b.cols() != c || ia.len() != ib.len() {
            return Err(Error::shape("pair_dot", a.shape(), b.shape()));
        }
        let (ra, rb) = (a.rows(), b.rows());
        if ia.iter().any(|&i| i >= ra) || ib.iter().any(|&i| i >= rb) {
            return Err(Error::invalid("pair_dot", "row index out of range"));
        }
        let data = ia
            .iter()
            .zip(ib.iter())
            .map(|(&i, &j)| {
                a.data()[i * c..(i + 1) * c]
                    .iter()
                    .zip(&b.data()[j * c..(j + 1) * c])
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(
            Tensor {
                shape: vec![ia.len(), 1],
                data,
            },
            Op::PairDot {
                a: self.id,
                ia,
                b: other.id,
                ib,
                cols: c,
            },
            needs,
        ))
    }

    /// `out[seg[p]] += w[p] * self[idx[p]]` over `[m x c]` rows, in
    /// ascending `p`. Equal to `gather_rows`, `mul_rows` and `segment_sum`
    /// in sequence, without the per-pair intermediates.
    pub fn gather_weighted_sum(
        &self,
        idx: Index,
        w: &Var<'t>,
        seg: Index,
        num_segments: usize,
    ) -> Result<Var<'t>> {
        same_tape(self, w);
        let (x, wv) = (self.value(), w.value());
        let (m, c) = (x.rows(), x.cols());
        if wv.numel() != idx.len() || seg.len() != idx.len() {
            return Err(Error::invalid(
                "gather_weighted_sum",
                format!(
                    "{} indices, {} weights, {} segment ids",
                    idx.len(),
                    wv.numel(),
                    seg.len()
                ),
            ));
        }
        if idx.iter().any(|&i| i >= m) || seg.iter().any(|&s| s >= num_segments) {
            return Err(Error::invalid("gather_weighted_sum", "index out of range"));
        }
        let mut data = vec![0.0; num_segments * c];
        for ((&i, &s), wp) in idx.iter().zip(seg.iter()).zip(wv.data()) {
            data[s * c..(s + 1) * c]
                .iter_mut()
                .zip(&x.data()[i * c..(i + 1) * c])
                .for_each(|(d, v)| *d += v * wp);
        }
        let needs = self.tape.needs(&[self.id, w.id]);
        Ok(self.tape.push(
            Tensor {
                shape: vec![num_segments, c],
                data,
            },
            Op::GatherWeightedSum {
                x: self.id,
                idx,
                w: w.id,
                seg,
                cols: c,
            },
            needs,
        ))
    }

    /// Per-row matrix-vector product. `self` holds one flattened row-major
    /// `[p x q]` matrix per row (`[R_m x p*q]`); `vecs` is `[R x q]`.
    /// Output row `r` is `mat[index[r]] * vecs[r]` (identity index when
    /// `None`, which requires `R_m == R`).
    pub fn batched_matvec(
        &self,
        vecs: &Var<'t>,
        p: usize,
        index: Option<Index>,
    ) -> Result<Var<'t>> {
        same_tape(self, vecs);
        let (mv, vv) = (self.value(), vecs.value());
        let q = vv.cols();
        let rows = vv.rows();
        if mv.cols() != p * q {
            return Err(Error::shape("batched_matvec", mv.shape(), vv.shape()));
        }
        match &index {
            Some(ix) => {
                if ix.len() != rows || ix.iter().any(|&i| i >= mv.rows()) {
                    return Err(Error::invalid(
                        "batched_matvec",
                        format!("index of length {} for {rows} rows", ix.len()),
                    ));
                }
            }
            None => {
                if mv.rows() != rows {
                    return Err(Error::shape("batched_matvec", mv.shape(), vv.shape()));
                }
            }
        }
        let pq = p * q;
        let mut data = vec![0.0; rows * p];
        if let Some(ix) = &index {
            for (m, group) in row_groups(ix, mv.rows()).iter().enumerate() {
                if group.is_empty() {
                    continue;
                }
                let v = gather(vv.data(), group, q);
                let mut out = vec![0.0; group.len() * p];
                gemm(
                    group.len(),
                    q,
                    p,
                    &v,
                    false,
                    &mv.data()[m * pq..(m + 1) * pq],
                    true,
                    0.0,
                    &mut out,
                );
                for (&r, o) in group.iter().zip(out.chunks_exact(p.max(1))) {
                    data[r * p..(r + 1) * p].copy_from_slice(o);
                }
            }
            return self.push_batched_matvec(vecs, data, rows, index, p, q);
        }
        for r in 0..rows {
            let base = r * pq;
            let v = &vv.data()[r * q..(r + 1) * q];
            for i in 0..p {
                data[r * p + i] = mv.data()[base + i * q..base + (i + 1) * q]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum();
            }
        }
        self.push_batched_matvec(vecs, data, rows, index, p, q)
    }

    fn push_batched_matvec(
        &self,
        vecs: &Var<'t>,
        data: Vec<f64>,
        rows: usize,
        index: Option<Index>,
        p: usize,
        q: usize,
    ) -> Result<Var<'t>> {
        let needs = self.tape.needs(&[self.id, vecs.id]);
        Ok(self.tape.push(
            Tensor {
                shape: vec![rows, p],
                data,
            },
            Op::BatchedMatVec {
                mats: self.id,
                vecs: vecs.id,
                index,
                p,
                q,
            },
            needs,
        ))
    }

    /// `x * tanh(softplus(x))`.
    pub fn mish(&self) -> Var<'t> {
        unary(*self, mish_scalar, Op::Mish(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        unary(*self, sigmoid_scalar, Op::Sigmoid(self.id))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t> {
        unary(
            *self,
            |x| if x >= 0.0 { x } else { slope * x },
            Op::LeakyRelu(self.id, slope),
        )
    }

    pub fn abs(&self) -> Var<'t> {
        unary(*self, f64::abs, Op::Abs(self.id))
    }

    /// Gated linear unit over the last axis: `a * sigmoid(b)` where
    /// `[a | b]` are the two halves.
    pub fn glu(&self) -> Result<Var<'t>> {
        let x = self.value();
        let c = x.cols();
        if !c.is_multiple_of(2) || x.shape().is_empty() {
            return Err(Error::invalid(
                "glu",
                format!("last axis must be even, got shape {:?}", x.shape()),
            ));
        }
        let half = c / 2;
        let rows = x.rows();
        let mut data = Vec::with_capacity(rows * half);
        for r in 0..rows {
            let row = &x.data()[r * c..(r + 1) * c];
            for j in 0..half {
                data.push(row[j] * sigmoid_scalar(row[half + j]));
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = half;
        Ok(self.tape.push(
            Tensor { shape, data },
            Op::Glu { x: self.id, half },
            self.needs_grad(),
        ))
    }

    /// Valid temporal convolution of `[T x N x c_in]` with a kernel
    /// `[K x c_in x c_out]` shared over all `N` entities.
    pub fn conv1d_time(&self, kernel: &Var<'t>) -> Result<Var<'t>> {
        same_tape(self, kernel);
        let (x, kv) = (self.value(), kernel.value());
        let (xs, ks) = (x.shape(), kv.shape());
        if xs.len() != 3 || ks.len() != 3 || xs[2] != ks[1] {
            return Err(Error::shape("conv1d_time", xs, ks));
        }
        let (t, n, cin) = (xs[0], xs[1], xs[2]);
        let (k, cout) = (ks[0], ks[2]);
        if k == 0 || t < k {
            return Err(Error::invalid(
                "conv1d_time",
                format!("series length {t} shorter than kernel width {k}"),
            ));
        }
        let t_out = t - k + 1;
        let rows = t_out * n;
        let block = n * cin;
        let mut data = vec![0.0; rows * cout];
        for s in 0..k {
            let xsl = &x.data()[s * block..s * block + rows * cin];
            let kk = &kv.data()[s * cin * cout..(s + 1) * cin * cout];
            gemm(rows, cin, cout, xsl, false, kk, false, 1.0, &mut data);
        }
        let needs = self.tape.needs(&[self.id, kernel.id]);
        Ok(self.tape.push(
            Tensor {
                shape: vec![t_out, n, cout],
                data,
            },
            Op::Conv1dTime {
                x: self.id,
                kernel: kernel.id,
                t_out,
                n,
                cin,
                cout,
                k,
            },
            needs,
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let t = (*x).clone().reshape(shape)?;
        Ok(self.tape.push(t, Op::Reshape(self.id), self.needs_grad()))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.tape
            .push(Tensor::scalar(s), Op::Sum(self.id), self.needs_grad())
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    pub fn sum_squares(&self) -> Var<'t> {
        let s = self.value().sum_squares();
        self.tape.push(
            Tensor::scalar(s),
            Op::SumSquares(self.id),
            self.needs_grad(),
        )
    }

    /// Log-softmax over all elements.
    pub fn log_softmax(&self) -> Var<'t> {
        let x = self.value();
        let max = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let out = x.map(|v| v - lse);
        self.tape
            .push(out, Op::LogSoftmax(self.id), self.needs_grad())
    }

    /// Log-softmax within each segment, one score per entry.
    pub fn segment_log_softmax(&self, ids: Index) -> Result<Var<'t>> {
        let x = self.value();
        if ids.len() != x.numel() || (x.shape().len() > 1 && x.cols() != 1) {
            return Err(Error::invalid(
                "segment_log_softmax",
                format!("{} ids for scores of shape {:?}", ids.len(), x.shape()),
            ));
        }
        let nseg = ids.iter().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; nseg];
        for (v, &s) in x.data().iter().zip(ids.iter()) {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "segment_log_softmax scores".into(),
                });
            }
            max[s] = max[s].max(*v);
        }
        let mut lse = vec![0.0; nseg];
        for (v, &s) in x.data().iter().zip(ids.iter()) {
            lse[s] += (v - max[s]).exp();
        }
        for (l, m) in lse.iter_mut().zip(&max) {
            *l = m + l.ln();
        }
        let data = x
            .data()
            .iter()
            .zip(ids.iter())
            .map(|(v, &s)| v - lse[s])
            .collect();
        Ok(self.tape.push(
            Tensor {
                shape: x.shape().to_vec(),
                data,
            },
            Op::SegmentLogSoftmax { x: self.id, ids },
            self.needs_grad(),
        ))
    }
}
