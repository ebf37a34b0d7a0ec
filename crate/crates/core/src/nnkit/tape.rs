//! Recording engine with reverse-mode backward pass.

use std::rc::Rc;

use super::engine::Engine;
use super::kernels::{self, Bcast, Fun};
use super::params::{ParamId, ParamStore};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Dense { x: NodeId, w: ParamId, b: Option<ParamId> },
    MatConst { x: NodeId, m: Rc<[f64]> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId, Bcast),
    Scale(NodeId, f64),
    Unary(NodeId, Fun, u8),
    SumCols(NodeId),
    AddN(Vec<NodeId>),
    Concat(Vec<NodeId>),
    SliceCols { a: NodeId, start: usize },
    PadRows { a: NodeId, before: usize },
    SliceRows { a: NodeId, start: usize },
    LogSoftmax(NodeId),
    PickSum { a: NodeId, idx: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    val: Vec<f64>,
    op: Op,
    req: bool,
}

pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node>,
    track_params: bool,
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Vec<f64>>,
    pub params: Vec<f64>,
}

impl Gradients {
    /// Gradient with respect to a node, zeros if it received none.
    pub fn node(&self, id: NodeId) -> Option<&[f64]> {
        let g = &self.nodes[id];
        if g.is_empty() {
            None
        } else {
            Some(g)
        }
    }
}

impl<'a> Tape<'a> {
    /// With `track_params`, every dense layer records parameter gradients.
    pub fn new(params: &'a ParamStore, track_params: bool) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            track_params,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> NodeId {
        self.push(rows, cols, data, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].val
    }

    fn push(&mut self, rows: usize, cols: usize, val: Vec<f64>, op: Op, req: bool) -> NodeId {
        debug_assert_eq!(rows * cols, val.len());
        self.nodes.push(Node { rows, cols, val, op, req });
        self.nodes.len() - 1
    }

    fn req(&self, id: NodeId) -> bool {
        self.nodes[id].req
    }

    /// Reverse sweep from `seeds` (node, upstream gradient) pairs.
    pub fn backward(&self, seeds: &[(NodeId, Vec<f64>)]) -> Gradients {
        let n = self.nodes.len();
        let mut g: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut gp = vec![0.0; if self.track_params { self.params.len() } else { 0 }];
        for (id, s) in seeds {
            assert_eq!(s.len(), self.nodes[*id].val.len(), "seed shape");
            let dst = acc(&mut g, *id, s.len());
            for (a, b) in dst.iter_mut().zip(s) {
                *a += b;
            }
        }
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if g[i].is_empty() || !node.req || matches!(node.op, Op::Leaf) {
                continue;
            }
            let gi = std::mem::take(&mut g[i]);
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Dense { x, w, b } => {
                    let xn = &self.nodes[*x];
                    let (out, inp) = (node.cols, xn.cols);
                    let wv = self.params.get(*w);
                    if xn.req {
                        let gx = acc(&mut g, *x, xn.val.len());
                        kernels::dense_backward(&gi, &xn.val, node.rows, inp, wv, out, Some(gx), None, None);
                    }
                    if self.track_params {
                        let wo = self.params.offset(*w);
                        kernels::dense_backward(
                            &gi,
                            &xn.val,
                            node.rows,
                            inp,
                            wv,
                            out,
                            None,
                            Some(&mut gp[wo..wo + out * inp]),
                            None,
                        );
                        if let Some(b) = b {
                            let bo = self.params.offset(*b);
                            kernels::dense_backward(
                                &gi,
                                &xn.val,
                                node.rows,
                                inp,
                                wv,
                                out,
                                None,
                                None,
                                Some(&mut gp[bo..bo + out]),
                            );
                        }
                    }
                }
                Op::MatConst { x, m } => {
                    let xn = &self.nodes[*x];
                    if xn.req {
                        let gx = acc(&mut g, *x, xn.val.len());
                        kernels::dense_backward(&gi, &xn.val, node.rows, xn.cols, m, node.cols, Some(gx), None, None);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if self.req(*a) {
                        axpy(acc(&mut g, *a, gi.len()), 1.0, &gi);
                    }
                    if self.req(*b) {
                        axpy(acc(&mut g, *b, gi.len()), sign, &gi);
                    }
                }
                Op::Mul(a, b, bc) => {
                    let (an, bn) = (&self.nodes[*a], &self.nodes[*b]);
                    if an.req {
                        let ga = acc(&mut g, *a, an.val.len());
                        bc.mul_backward(&gi, &an.val, &bn.val, Some(ga), None);
                    }
                    if bn.req {
                        let gb = acc(&mut g, *b, bn.val.len());
                        bc.mul_backward(&gi, &an.val, &bn.val, None, Some(gb));
                    }
                }
                Op::Scale(a, c) => {
                    if self.req(*a) {
                        axpy(acc(&mut g, *a, gi.len()), *c, &gi);
                    }
                }
                Op::Unary(a, f, k) => {
                    if self.req(*a) {
                        let av = &self.nodes[*a].val;
                        let ga = acc(&mut g, *a, gi.len());
                        for ((d, &x), &u) in ga.iter_mut().zip(av).zip(&gi) {
                            *d += u * f.eval(k + 1, x);
                        }
                    }
                }
                Op::SumCols(a) => {
                    let an = &self.nodes[*a];
                    if an.req {
                        let cols = an.cols;
                        let ga = acc(&mut g, *a, an.val.len());
                        for (r, &u) in gi.iter().enumerate() {
                            for d in &mut ga[r * cols..(r + 1) * cols] {
                                *d += u;
                            }
                        }
                    }
                }
                Op::AddN(items) => {
                    for &a in items {
                        if self.req(a) {
                            axpy(acc(&mut g, a, gi.len()), 1.0, &gi);
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut c0 = 0;
                    for &a in parts {
                        let an = &self.nodes[a];
                        let w = an.cols;
                        if an.req {
                            let ga = acc(&mut g, a, an.val.len());
                            for r in 0..node.rows {
                                axpy(
                                    &mut ga[r * w..(r + 1) * w],
                                    1.0,
                                    &gi[r * node.cols + c0..r * node.cols + c0 + w],
                                );
                            }
                        }
                        c0 += w;
                    }
                }
                Op::SliceCols { a, start } => {
                    let an = &self.nodes[*a];
                    if an.req {
                        let (ac, w) = (an.cols, node.cols);
                        let ga = acc(&mut g, *a, an.val.len());
                        for r in 0..node.rows {
                            axpy(&mut ga[r * ac + start..r * ac + start + w], 1.0, &gi[r * w..(r + 1) * w]);
                        }
                    }
                }
                Op::PadRows { a, before } => {
                    let an = &self.nodes[*a];
                    if an.req {
                        let c = node.cols;
                        let len = an.val.len();
                        axpy(acc(&mut g, *a, len), 1.0, &gi[before * c..before * c + len]);
                    }
                }
                Op::SliceRows { a, start } => {
                    let an = &self.nodes[*a];
                    if an.req {
                        let c = node.cols;
                        let ga = acc(&mut g, *a, an.val.len());
                        axpy(&mut ga[start * c..start * c + gi.len()], 1.0, &gi);
                    }
                }
                Op::LogSoftmax(a) => {
                    if self.req(*a) {
                        let total: f64 = gi.iter().sum();
                        let ga = acc(&mut g, *a, gi.len());
                        for ((d, &y), &u) in ga.iter_mut().zip(&node.val).zip(&gi) {
                            *d += u - y.exp() * total;
                        }
                    }
                }
                Op::PickSum { a, idx } => {
                    let an = &self.nodes[*a];
                    if an.req {
                        let ga = acc(&mut g, *a, an.val.len());
                        for &k in idx {
                            ga[k] += gi[0];
                        }
                    }
                }
            }
        }
        Gradients { nodes: g, params: gp }
    }
}

fn acc(g: &mut [Vec<f64>], id: NodeId, len: usize) -> &mut [f64] {
    if g[id].is_empty() {
        g[id] = vec![0.0; len];
    }
    &mut g[id]
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (u, v) in y.iter_mut().zip(x) {
        *u += a * v;
    }
}

impl Engine for Tape<'_> {
    type M = NodeId;

    fn params(&self) -> &ParamStore {
        self.params
    }

    fn shape(&self, m: &NodeId) -> (usize, usize) {
        let n = &self.nodes[*m];
        (n.rows, n.cols)
    }

    fn data<'s>(&'s self, m: &'s NodeId) -> &'s [f64] {
        &self.nodes[*m].val
    }

    fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> NodeId {
        self.push(rows, cols, data, Op::Leaf, false)
    }

    fn dense(&mut self, x: &NodeId, w: ParamId, b: Option<ParamId>) -> NodeId {
        let shape = self.params.shape(w);
        let (out, inp) = (shape[0], shape[1]);
        let xn = &self.nodes[*x];
        assert_eq!(xn.cols, inp, "dense input width");
        let y = kernels::dense(&xn.val, xn.rows, inp, self.params.get(w), b.map(|b| self.params.get(b)), out);
        let req = self.track_params || xn.req;
        self.push(xn.rows, out, y, Op::Dense { x: *x, w, b }, req)
    }

    fn mat_const(&mut self, x: &NodeId, m: Rc<[f64]>, out: usize) -> NodeId {
        let xn = &self.nodes[*x];
        let y = kernels::dense(&xn.val, xn.rows, xn.cols, &m, None, out);
        let (rows, req) = (xn.rows, xn.req);
        self.push(rows, out, y, Op::MatConst { x: *x, m }, req)
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let (an, bn) = (&self.nodes[*a], &self.nodes[*b]);
        assert_eq!((an.rows, an.cols), (bn.rows, bn.cols));
        let y = an.val.iter().zip(&bn.val).map(|(x, y)| x + y).collect();
        let (r, c, req) = (an.rows, an.cols, an.req || bn.req);
        self.push(r, c, y, Op::Add(*a, *b), req)
    }

    fn sub(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let (an, bn) = (&self.nodes[*a], &self.nodes[*b]);
        assert_eq!((an.rows, an.cols), (bn.rows, bn.cols));
        let y = an.val.iter().zip(&bn.val).map(|(x, y)| x - y).collect();
        let (r, c, req) = (an.rows, an.cols, an.req || bn.req);
        self.push(r, c, y, Op::Sub(*a, *b), req)
    }

    fn mul(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let (an, bn) = (&self.nodes[*a], &self.nodes[*b]);
        let bc = Bcast::new(an.rows, an.cols, bn.rows, bn.cols);
        let y = bc.mul(&an.val, &bn.val);
        let req = an.req || bn.req;
        self.push(bc.rows, bc.cols, y, Op::Mul(*a, *b, bc), req)
    }

    fn scale(&mut self, a: &NodeId, c: f64) -> NodeId {
        let an = &self.nodes[*a];
        let y = an.val.iter().map(|x| c * x).collect();
        let (r, cols, req) = (an.rows, an.cols, an.req);
        self.push(r, cols, y, Op::Scale(*a, c), req)
    }

    fn unary(&mut self, a: &NodeId, f: Fun, order: u8) -> NodeId {
        let an = &self.nodes[*a];
        let y = an.val.iter().map(|&x| f.eval(order, x)).collect();
        let (r, c, req) = (an.rows, an.cols, an.req);
        self.push(r, c, y, Op::Unary(*a, f, order), req)
    }

    fn sum_cols(&mut self, a: &NodeId) -> NodeId {
        let an = &self.nodes[*a];
        let y = kernels::sum_cols(&an.val, an.rows, an.cols);
        let (r, req) = (an.rows, an.req);
        self.push(r, 1, y, Op::SumCols(*a), req)
    }

    fn add_n(&mut self, items: &[NodeId]) -> NodeId {
        let first = &self.nodes[items[0]];
        let (r, c) = (first.rows, first.cols);
        let mut y = first.val.clone();
        let mut req = first.req;
        for &it in &items[1..] {
            let n = &self.nodes[it];
            assert_eq!((n.rows, n.cols), (r, c));
            axpy(&mut y, 1.0, &n.val);
            req |= n.req;
        }
        self.push(r, c, y, Op::AddN(items.to_vec()), req)
    }

    fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.nodes[parts[0]].rows;
        let views: Vec<(&[f64], usize)> = parts
            .iter()
            .map(|&p| {
                let n = &self.nodes[p];
                assert_eq!(n.rows, rows);
                (n.val.as_slice(), n.cols)
            })
            .collect();
        let y = kernels::concat_cols(&views, rows);
        let cols = parts.iter().map(|&p| self.nodes[p].cols).sum();
        let req = parts.iter().any(|&p| self.nodes[p].req);
        self.push(rows, cols, y, Op::Concat(parts.to_vec()), req)
    }

    fn slice_cols(&mut self, a: &NodeId, start: usize, len: usize) -> NodeId {
        let an = &self.nodes[*a];
        let y = kernels::slice_cols(&an.val, an.rows, an.cols, start, len);
        let (r, req) = (an.rows, an.req);
        self.push(r, len, y, Op::SliceCols { a: *a, start }, req)
    }

    fn pad_rows(&mut self, a: &NodeId, before: usize, after: usize) -> NodeId {
        let an = &self.nodes[*a];
        let c = an.cols;
        let mut y = vec![0.0; (an.rows + before + after) * c];
        y[before * c..(before + an.rows) * c].copy_from_slice(&an.val);
        let (r, req) = (an.rows + before + after, an.req);
        self.push(r, c, y, Op::PadRows { a: *a, before }, req)
    }

    fn slice_rows(&mut self, a: &NodeId, start: usize, rows: usize) -> NodeId {
        let an = &self.nodes[*a];
        let c = an.cols;
        let y = an.val[start * c..(start + rows) * c].to_vec();
        let req = an.req;
        self.push(rows, c, y, Op::SliceRows { a: *a, start }, req)
    }

    fn log_softmax(&mut self, a: &NodeId) -> NodeId {
        let an = &self.nodes[*a];
        assert_eq!(an.rows, 1);
        let y = kernels::log_softmax(&an.val);
        let (c, req) = (an.cols, an.req);
        self.push(1, c, y, Op::LogSoftmax(*a), req)
    }

    fn pick_sum(&mut self, a: &NodeId, idx: Vec<usize>) -> NodeId {
        let an = &self.nodes[*a];
        let y = vec![idx.iter().map(|&i| an.val[i]).sum()];
        let req = an.req;
        self.push(1, 1, y, Op::PickSum { a: *a, idx }, req)
    }
}
