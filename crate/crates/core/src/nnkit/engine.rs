//! Matrix engines: the primitive operations that [`super::Dual`] is written
//! against. [`Eager`] computes values directly; [`super::Tape`] records them
//! for reverse-mode differentiation.

use std::rc::Rc;

use super::kernels::{self, Bcast, Fun};
use super::params::{ParamId, ParamStore};

pub trait Engine {
    /// Handle to a `rows x cols` matrix.
    type M: Clone;

    fn params(&self) -> &ParamStore;
    fn shape(&self, m: &Self::M) -> (usize, usize);
    fn data<'s>(&'s self, m: &'s Self::M) -> &'s [f64];

    fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Self::M;
    /// `x Wᵀ + b` for a parameter weight of shape `[out, in]`.
    fn dense(&mut self, x: &Self::M, w: ParamId, b: Option<ParamId>) -> Self::M;
    /// `x Mᵀ` for a constant `out x in` matrix.
    fn mat_const(&mut self, x: &Self::M, m: Rc<[f64]>, out: usize) -> Self::M;
    fn add(&mut self, a: &Self::M, b: &Self::M) -> Self::M;
    fn sub(&mut self, a: &Self::M, b: &Self::M) -> Self::M;
    /// Elementwise product; either operand may have a single row or column.
    fn mul(&mut self, a: &Self::M, b: &Self::M) -> Self::M;
    fn scale(&mut self, a: &Self::M, c: f64) -> Self::M;
    /// `order`-th derivative of `f`, elementwise.
    fn unary(&mut self, a: &Self::M, f: Fun, order: u8) -> Self::M;
    fn sum_cols(&mut self, a: &Self::M) -> Self::M;
    fn add_n(&mut self, items: &[Self::M]) -> Self::M;
    fn concat_cols(&mut self, parts: &[Self::M]) -> Self::M;
    fn slice_cols(&mut self, a: &Self::M, start: usize, len: usize) -> Self::M;
    /// Inserts zero rows above and below.
    fn pad_rows(&mut self, a: &Self::M, before: usize, after: usize) -> Self::M;
    fn slice_rows(&mut self, a: &Self::M, start: usize, rows: usize) -> Self::M;
    fn log_softmax(&mut self, a: &Self::M) -> Self::M;
    /// `1 x 1` sum of the flat entries at `idx`.
    fn pick_sum(&mut self, a: &Self::M, idx: Vec<usize>) -> Self::M;
}

#[derive(Debug, Clone)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Direct evaluation, no recording.
pub struct Eager<'a> {
    params: &'a ParamStore,
}

impl<'a> Eager<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Eager { params }
    }

    fn mk(rows: usize, cols: usize, data: Vec<f64>) -> Rc<Mat> {
        debug_assert_eq!(rows * cols, data.len());
        Rc::new(Mat { rows, cols, data })
    }
}

impl Engine for Eager<'_> {
    type M = Rc<Mat>;

    fn params(&self) -> &ParamStore {
        self.params
    }

    fn shape(&self, m: &Rc<Mat>) -> (usize, usize) {
        (m.rows, m.cols)
    }

    fn data<'s>(&'s self, m: &'s Rc<Mat>) -> &'s [f64] {
        &m.data
    }

    fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Rc<Mat> {
        Self::mk(rows, cols, data)
    }

    fn dense(&mut self, x: &Rc<Mat>, w: ParamId, b: Option<ParamId>) -> Rc<Mat> {
        let shape = self.params.shape(w);
        let (out, inp) = (shape[0], shape[1]);
        assert_eq!(x.cols, inp, "dense input width");
        let y = kernels::dense(
            &x.data,
            x.rows,
            inp,
            self.params.get(w),
            b.map(|b| self.params.get(b)),
            out,
        );
        Self::mk(x.rows, out, y)
    }

    fn mat_const(&mut self, x: &Rc<Mat>, m: Rc<[f64]>, out: usize) -> Rc<Mat> {
        let y = kernels::dense(&x.data, x.rows, x.cols, &m, None, out);
        Self::mk(x.rows, out, y)
    }

    fn add(&mut self, a: &Rc<Mat>, b: &Rc<Mat>) -> Rc<Mat> {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols));
        Self::mk(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect())
    }

    fn sub(&mut self, a: &Rc<Mat>, b: &Rc<Mat>) -> Rc<Mat> {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols));
        Self::mk(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect())
    }

    fn mul(&mut self, a: &Rc<Mat>, b: &Rc<Mat>) -> Rc<Mat> {
        let bc = Bcast::new(a.rows, a.cols, b.rows, b.cols);
        Self::mk(bc.rows, bc.cols, bc.mul(&a.data, &b.data))
    }

    fn scale(&mut self, a: &Rc<Mat>, c: f64) -> Rc<Mat> {
        Self::mk(a.rows, a.cols, a.data.iter().map(|x| c * x).collect())
    }

    fn unary(&mut self, a: &Rc<Mat>, f: Fun, order: u8) -> Rc<Mat> {
        Self::mk(a.rows, a.cols, a.data.iter().map(|&x| f.eval(order, x)).collect())
    }

    fn sum_cols(&mut self, a: &Rc<Mat>) -> Rc<Mat> {
        Self::mk(a.rows, 1, kernels::sum_cols(&a.data, a.rows, a.cols))
    }

    fn add_n(&mut self, items: &[Rc<Mat>]) -> Rc<Mat> {
        let first = &items[0];
        let mut acc = first.data.clone();
        for it in &items[1..] {
            assert_eq!((it.rows, it.cols), (first.rows, first.cols));
            for (a, b) in acc.iter_mut().zip(&it.data) {
                *a += b;
            }
        }
        Self::mk(first.rows, first.cols, acc)
    }

    fn concat_cols(&mut self, parts: &[Rc<Mat>]) -> Rc<Mat> {
        let rows = parts[0].rows;
        let views: Vec<(&[f64], usize)> = parts
            .iter()
            .map(|p| {
                assert_eq!(p.rows, rows);
                (p.data.as_slice(), p.cols)
            })
            .collect();
        let cols = parts.iter().map(|p| p.cols).sum();
        Self::mk(rows, cols, kernels::concat_cols(&views, rows))
    }

    fn slice_cols(&mut self, a: &Rc<Mat>, start: usize, len: usize) -> Rc<Mat> {
        Self::mk(a.rows, len, kernels::slice_cols(&a.data, a.rows, a.cols, start, len))
    }

    fn pad_rows(&mut self, a: &Rc<Mat>, before: usize, after: usize) -> Rc<Mat> {
        let mut d = vec![0.0; (a.rows + before + after) * a.cols];
        d[before * a.cols..(before + a.rows) * a.cols].copy_from_slice(&a.data);
        Self::mk(a.rows + before + after, a.cols, d)
    }

    fn slice_rows(&mut self, a: &Rc<Mat>, start: usize, rows: usize) -> Rc<Mat> {
        Self::mk(rows, a.cols, a.data[start * a.cols..(start + rows) * a.cols].to_vec())
    }

    fn log_softmax(&mut self, a: &Rc<Mat>) -> Rc<Mat> {
        assert_eq!(a.rows, 1);
        Self::mk(1, a.cols, kernels::log_softmax(&a.data))
    }

    fn pick_sum(&mut self, a: &Rc<Mat>, idx: Vec<usize>) -> Rc<Mat> {
        Self::mk(1, 1, vec![idx.iter().map(|&i| a.data[i]).sum()])
    }
}
