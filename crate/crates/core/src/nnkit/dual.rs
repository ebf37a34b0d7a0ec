//! Forward-mode tangents layered over any [`Engine`].
//!
//! A [`DVal`] is a primal row `1 x w` plus an optional tangent block
//! `r x w` whose rows are directions `off..off + r` of a global input space.
//! Values that depend on a subset of inputs carry only that window, which
//! keeps per-vertex quantities cheap early in a network.

use std::rc::Rc;

use super::engine::Engine;
use super::kernels::Fun;
use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct DVal<M> {
    pub p: M,
    pub t: Option<(M, usize)>,
}

impl<M> DVal<M> {
    pub fn primal(p: M) -> Self {
        DVal { p, t: None }
    }
}

pub struct Dual<E: Engine> {
    pub e: E,
}

impl<E: Engine> Dual<E> {
    pub fn new(e: E) -> Self {
        Dual { e }
    }

    pub fn into_inner(self) -> E {
        self.e
    }

    pub fn params(&self) -> &ParamStore {
        self.e.params()
    }

    pub fn width(&self, v: &DVal<E::M>) -> usize {
        self.e.shape(&v.p).1
    }

    pub fn value<'s>(&'s self, v: &'s DVal<E::M>) -> &'s [f64] {
        self.e.data(&v.p)
    }

    /// Tangent window `(offset, rows)` if any.
    pub fn window(&self, v: &DVal<E::M>) -> Option<(usize, usize)> {
        v.t.as_ref().map(|(t, off)| (*off, self.e.shape(t).0))
    }

    pub fn tangent_data<'s>(&'s self, v: &'s DVal<E::M>) -> Option<&'s [f64]> {
        v.t.as_ref().map(|(t, _)| self.e.data(t))
    }

    pub fn constant(&mut self, data: Vec<f64>) -> DVal<E::M> {
        let w = data.len();
        DVal::primal(self.e.constant(1, w, data))
    }

    pub fn zeros(&mut self, w: usize) -> DVal<E::M> {
        self.constant(vec![0.0; w])
    }

    /// Wraps an existing engine value.
    pub fn lift(&self, p: E::M) -> DVal<E::M> {
        DVal::primal(p)
    }

    /// Identity tangent: the entries of `v` are directions `off..off + w`.
    pub fn seed(&mut self, v: &DVal<E::M>, off: usize) -> DVal<E::M> {
        let w = self.width(v);
        let mut eye = vec![0.0; w * w];
        for k in 0..w {
            eye[k * w + k] = 1.0;
        }
        let t = self.e.constant(w, w, eye);
        DVal {
            p: v.p.clone(),
            t: Some((t, off)),
        }
    }

    /// Drops tangent rows outside `lo..lo + rows`.
    pub fn restrict(&mut self, v: &DVal<E::M>, lo: usize, rows: usize) -> DVal<E::M> {
        let t = match &v.t {
            None => None,
            Some((t, off)) => {
                let r = self.e.shape(t).0;
                let a = lo.max(*off);
                let b = (lo + rows).min(off + r);
                if a >= b {
                    None
                } else if a == *off && b == off + r {
                    Some((t.clone(), *off))
                } else {
                    Some((self.e.slice_rows(t, a - off, b - a), a))
                }
            }
        };
        DVal { p: v.p.clone(), t }
    }

    /// Drops the tangent entirely.
    pub fn detach(&self, v: &DVal<E::M>) -> DVal<E::M> {
        DVal::primal(v.p.clone())
    }

    /// `Σ_c ∂v_c / ∂u_{row + c}`: the trace of the block of directions starting
    /// at `row`, as a `1 x 1` primal.
    pub fn tangent_trace(&mut self, v: &DVal<E::M>, row: usize) -> DVal<E::M> {
        let w = self.width(v);
        let Some((t, off)) = &v.t else {
            return self.zeros(1);
        };
        let r = self.e.shape(t).0;
        let idx: Vec<usize> = (0..w)
            .filter(|c| row + c >= *off && row + c < off + r)
            .map(|c| (row + c - off) * w + c)
            .collect();
        if idx.is_empty() {
            return self.zeros(1);
        }
        DVal::primal(self.e.pick_sum(t, idx))
    }

    fn align(&mut self, t: &E::M, off: usize, lo: usize, hi: usize) -> E::M {
        let r = self.e.shape(t).0;
        if off == lo && off + r == hi {
            t.clone()
        } else {
            self.e.pad_rows(t, off - lo, hi - off - r)
        }
    }

    fn union<'a>(&self, ts: impl Iterator<Item = &'a (E::M, usize)>) -> Option<(usize, usize)>
    where
        E::M: 'a,
    {
        let mut out: Option<(usize, usize)> = None;
        for (t, off) in ts {
            let hi = off + self.e.shape(t).0;
            out = Some(match out {
                None => (*off, hi),
                Some((a, b)) => (a.min(*off), b.max(hi)),
            });
        }
        out
    }

    fn t_add(&mut self, a: Option<(E::M, usize)>, b: Option<(E::M, usize)>, sign: f64) -> Option<(E::M, usize)> {
        match (a, b) {
            (None, None) => None,
            (Some(a), None) => Some(a),
            (None, Some((b, off))) => Some(if sign < 0.0 { (self.e.scale(&b, -1.0), off) } else { (b, off) }),
            (Some(a), Some(b)) => {
                let (lo, hi) = self.union([&a, &b].into_iter()).unwrap();
                let ta = self.align(&a.0, a.1, lo, hi);
                let tb = self.align(&b.0, b.1, lo, hi);
                let t = if sign < 0.0 { self.e.sub(&ta, &tb) } else { self.e.add(&ta, &tb) };
                Some((t, lo))
            }
        }
    }

    pub fn dense(&mut self, x: &DVal<E::M>, w: ParamId, b: Option<ParamId>) -> DVal<E::M> {
        let p = self.e.dense(&x.p, w, b);
        let t = x.t.as_ref().map(|(t, off)| (self.e.dense(t, w, None), *off));
        DVal { p, t }
    }

    /// `x Mᵀ` for a constant `out x in` matrix.
    pub fn mat_const(&mut self, x: &DVal<E::M>, m: Rc<[f64]>, out: usize) -> DVal<E::M> {
        let p = self.e.mat_const(&x.p, m.clone(), out);
        let t = x.t.as_ref().map(|(t, off)| (self.e.mat_const(t, m, out), *off));
        DVal { p, t }
    }

    pub fn add(&mut self, a: &DVal<E::M>, b: &DVal<E::M>) -> DVal<E::M> {
        let p = self.e.add(&a.p, &b.p);
        let t = self.t_add(a.t.clone(), b.t.clone(), 1.0);
        DVal { p, t }
    }

    pub fn sub(&mut self, a: &DVal<E::M>, b: &DVal<E::M>) -> DVal<E::M> {
        let p = self.e.sub(&a.p, &b.p);
        let t = self.t_add(a.t.clone(), b.t.clone(), -1.0);
        DVal { p, t }
    }

    /// Elementwise product; a width-1 operand broadcasts.
    pub fn mul(&mut self, a: &DVal<E::M>, b: &DVal<E::M>) -> DVal<E::M> {
        let p = self.e.mul(&a.p, &b.p);
        let ta = a.t.as_ref().map(|(t, off)| (self.e.mul(t, &b.p), *off));
        let tb = b.t.as_ref().map(|(t, off)| (self.e.mul(&a.p, t), *off));
        let t = self.t_add(ta, tb, 1.0);
        DVal { p, t }
    }

    pub fn scale(&mut self, a: &DVal<E::M>, c: f64) -> DVal<E::M> {
        let p = self.e.scale(&a.p, c);
        let t = a.t.as_ref().map(|(t, off)| (self.e.scale(t, c), *off));
        DVal { p, t }
    }

    pub fn unary(&mut self, a: &DVal<E::M>, f: Fun) -> DVal<E::M> {
        let p = self.e.unary(&a.p, f, 0);
        let t = match &a.t {
            None => None,
            Some((t, off)) => {
                let d = self.e.unary(&a.p, f, 1);
                Some((self.e.mul(t, &d), *off))
            }
        };
        DVal { p, t }
    }

    /// Sum of entries, width 1.
    pub fn sum(&mut self, a: &DVal<E::M>) -> DVal<E::M> {
        let p = self.e.sum_cols(&a.p);
        let t = a.t.as_ref().map(|(t, off)| (self.e.sum_cols(t), *off));
        DVal { p, t }
    }

    /// Sum of equal-width values; an empty list yields zeros of `width`.
    pub fn add_n(&mut self, items: &[DVal<E::M>], width: usize) -> DVal<E::M> {
        match items.len() {
            0 => return self.zeros(width),
            1 => return items[0].clone(),
            _ => {}
        }
        let ps: Vec<E::M> = items.iter().map(|v| v.p.clone()).collect();
        let p = self.e.add_n(&ps);
        let t = match self.union(items.iter().filter_map(|v| v.t.as_ref())) {
            None => None,
            Some((lo, hi)) => {
                let ts: Vec<E::M> = items
                    .iter()
                    .filter_map(|v| v.t.as_ref())
                    .map(|(t, off)| self.align(t, *off, lo, hi))
                    .collect();
                let t = if ts.len() == 1 { ts[0].clone() } else { self.e.add_n(&ts) };
                Some((t, lo))
            }
        };
        DVal { p, t }
    }

    pub fn concat(&mut self, parts: &[DVal<E::M>]) -> DVal<E::M> {
        let ps: Vec<E::M> = parts.iter().map(|v| v.p.clone()).collect();
        let p = if ps.len() == 1 { ps[0].clone() } else { self.e.concat_cols(&ps) };
        let t = match self.union(parts.iter().filter_map(|v| v.t.as_ref())) {
            None => None,
            Some((lo, hi)) => {
                let mut ts = Vec::with_capacity(parts.len());
                for v in parts {
                    let t = match &v.t {
                        Some((t, off)) => self.align(t, *off, lo, hi),
                        None => {
                            let w = self.width(v);
                            self.e.constant(hi - lo, w, vec![0.0; (hi - lo) * w])
                        }
                    };
                    ts.push(t);
                }
                let t = if ts.len() == 1 { ts[0].clone() } else { self.e.concat_cols(&ts) };
                Some((t, lo))
            }
        };
        DVal { p, t }
    }

    pub fn slice(&mut self, a: &DVal<E::M>, start: usize, len: usize) -> DVal<E::M> {
        let p = self.e.slice_cols(&a.p, start, len);
        let t = a.t.as_ref().map(|(t, off)| (self.e.slice_cols(t, start, len), *off));
        DVal { p, t }
    }

    /// Log-softmax of a tangent-free value.
    pub fn log_softmax(&mut self, a: &DVal<E::M>) -> DVal<E::M> {
        debug_assert!(a.t.is_none(), "log_softmax carries no tangent");
        DVal::primal(self.e.log_softmax(&a.p))
    }

    /// Sum of the entries at `idx`, tangent-free.
    pub fn pick_sum(&mut self, a: &DVal<E::M>, idx: Vec<usize>) -> DVal<E::M> {
        DVal::primal(self.e.pick_sum(&a.p, idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::engine::Eager;
    use crate::nnkit::params::Init;

    #[test]
    fn tangent_of_quadratic_field_matches_hand_derivative() {
        // f(u) = (u0², u0·u1) at (1, 2): df0/du0 = 2, df1/du1 = 1.
        let store = ParamStore::new();
        let mut d = Dual::new(Eager::new(&store));
        let u = d.constant(vec![1.0, 2.0]);
        let u = d.seed(&u, 0);
        let u0 = d.slice(&u, 0, 1);
        let u1 = d.slice(&u, 1, 1);
        let f0 = d.mul(&u0, &u0);
        let f1 = d.mul(&u0, &u1);
        let f = d.concat(&[f0, f1]);
        let tr = d.tangent_trace(&f, 0);
        assert_eq!(d.value(&tr), &[3.0]);
    }

    #[test]
    fn windowed_tangents_match_full_jacobian() {
        let mut store = ParamStore::new();
        let w = store.register("w", &[3, 4], Init::Glorot);
        let b = store.register("b", &[3], Init::Zeros);
        store.init(11);
        let x0 = [0.4, -0.3, 0.9, 1.3];
        let run = |x: &[f64]| {
            let mut d = Dual::new(Eager::new(&store));
            let a = d.constant(x[..2].to_vec());
            let c = d.constant(x[2..].to_vec());
            let a = d.seed(&a, 0);
            let c = d.seed(&c, 2);
            let z = d.concat(&[a.clone(), c]);
            let y = d.dense(&z, w, Some(b));
            let y = d.unary(&y, Fun::Silu);
            let s = d.sum(&y);
            let sa = d.slice(&a, 1, 1);
            let out = d.mul(&s, &sa);
            let out = d.add_n(&[out.clone(), out], 1);
            (d.value(&out)[0], d.tangent_data(&out).unwrap().to_vec(), d.window(&out).unwrap())
        };
        let (_, t, win) = run(&x0);
        assert_eq!(win, (0, 4));
        for k in 0..4 {
            let mut xp = x0;
            xp[k] += 1e-6;
            let mut xm = x0;
            xm[k] -= 1e-6;
            let fd = (run(&xp).0 - run(&xm).0) / 2e-6;
            assert!((fd - t[k]).abs() < 1e-7, "direction {k}: {fd} vs {}", t[k]);
        }
    }

    #[test]
    fn restrict_keeps_only_requested_rows() {
        let store = ParamStore::new();
        let mut d = Dual::new(Eager::new(&store));
        let v = d.constant(vec![1.0, 2.0, 3.0]);
        let v = d.seed(&v, 4);
        let r = d.restrict(&v, 5, 10);
        assert_eq!(d.window(&r), Some((5, 2)));
        let none = d.restrict(&v, 0, 4);
        assert!(none.t.is_none());
        let tr = d.tangent_trace(&r, 4);
        assert_eq!(d.value(&tr), &[2.0]);
    }
}
