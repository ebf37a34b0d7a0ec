//! Row-major dense kernels shared by the eager engine and the tape.
//!
//! A matrix is `rows x cols` stored row-major. Row 0 of a primal value is the
//! value itself; tangent blocks stack one row per input direction.

/// Scalar functions with their first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fun {
    Silu,
    Tanh,
    Sigmoid,
    Sqrt,
    Recip,
    Exp,
}

impl Fun {
    /// `order`-th derivative at `x`, for `order` in 0..=2.
    #[inline]
    pub fn eval(self, order: u8, x: f64) -> f64 {
        match (self, order) {
            (Fun::Sigmoid, 0) => sigmoid(x),
            (Fun::Sigmoid, 1) => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            (Fun::Sigmoid, _) => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            (Fun::Silu, 0) => x * sigmoid(x),
            (Fun::Silu, 1) => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            (Fun::Silu, _) => {
                let s = sigmoid(x);
                s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
            }
            (Fun::Tanh, 0) => x.tanh(),
            (Fun::Tanh, 1) => {
                let t = x.tanh();
                1.0 - t * t
            }
            (Fun::Tanh, _) => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            (Fun::Sqrt, 0) => x.sqrt(),
            (Fun::Sqrt, 1) => 0.5 / x.sqrt(),
            (Fun::Sqrt, _) => -0.25 / (x * x.sqrt()),
            (Fun::Recip, 0) => 1.0 / x,
            (Fun::Recip, 1) => -1.0 / (x * x),
            (Fun::Recip, _) => 2.0 / (x * x * x),
            (Fun::Exp, _) => x.exp(),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `y[r] = W x[r] + b` with `W` stored `out x inp`.
pub fn dense(x: &[f64], rows: usize, inp: usize, w: &[f64], b: Option<&[f64]>, out: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), rows * inp);
    debug_assert_eq!(w.len(), out * inp);
    let mut y = Vec::with_capacity(rows * out);
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        for o in 0..out {
            let wo = &w[o * inp..(o + 1) * inp];
            let mut acc = b.map_or(0.0, |b| b[o]);
            for (a, c) in wo.iter().zip(xr) {
                acc += a * c;
            }
            y.push(acc);
        }
    }
    y
}

/// Backward of [`dense`]: accumulates into `gx`, `gw` and `gb` when given.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    g: &[f64],
    x: &[f64],
    rows: usize,
    inp: usize,
    w: &[f64],
    out: usize,
    gx: Option<&mut [f64]>,
    gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    if let Some(gx) = gx {
        for r in 0..rows {
            let gr = &g[r * out..(r + 1) * out];
            let gxr = &mut gx[r * inp..(r + 1) * inp];
            for (o, &go) in gr.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let wo = &w[o * inp..(o + 1) * inp];
                for (a, &c) in gxr.iter_mut().zip(wo) {
                    *a += go * c;
                }
            }
        }
    }
    if let Some(gw) = gw {
        for r in 0..rows {
            let gr = &g[r * out..(r + 1) * out];
            let xr = &x[r * inp..(r + 1) * inp];
            for (o, &go) in gr.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let gwo = &mut gw[o * inp..(o + 1) * inp];
                for (a, &c) in gwo.iter_mut().zip(xr) {
                    *a += go * c;
                }
            }
        }
    }
    if let Some(gb) = gb {
        for r in 0..rows {
            for (a, &c) in gb.iter_mut().zip(&g[r * out..(r + 1) * out]) {
                *a += c;
            }
        }
    }
}

/// Shape of a broadcasting elementwise product.
#[derive(Debug, Clone, Copy)]
pub struct Bcast {
    pub rows: usize,
    pub cols: usize,
    a_rs: usize,
    a_cs: usize,
    b_rs: usize,
    b_cs: usize,
}

impl Bcast {
    /// Each operand dimension must equal the output dimension or be 1.
    pub fn new(ar: usize, ac: usize, br: usize, bc: usize) -> Self {
        let rows = ar.max(br);
        let cols = ac.max(bc);
        assert!(
            (ar == rows || ar == 1) && (br == rows || br == 1),
            "row broadcast {ar} vs {br}"
        );
        assert!(
            (ac == cols || ac == 1) && (bc == cols || bc == 1),
            "column broadcast {ac} vs {bc}"
        );
        let stride = |r: usize, c: usize| {
            (
                if r == 1 { 0 } else { c },
                if c == 1 { 0 } else { 1 },
            )
        };
        let (a_rs, a_cs) = stride(ar, ac);
        let (b_rs, b_cs) = stride(br, bc);
        Bcast {
            rows,
            cols,
            a_rs,
            a_cs,
            b_rs,
            b_cs,
        }
    }

    pub fn mul(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                y.push(a[r * self.a_rs + c * self.a_cs] * b[r * self.b_rs + c * self.b_cs]);
            }
        }
        y
    }

    /// Accumulates `d(a*b)` into `ga` / `gb`.
    pub fn mul_backward(&self, g: &[f64], a: &[f64], b: &[f64], ga: Option<&mut [f64]>, gb: Option<&mut [f64]>) {
        if let Some(ga) = ga {
            for r in 0..self.rows {
                for c in 0..self.cols {
                    let gv = g[r * self.cols + c];
                    ga[r * self.a_rs + c * self.a_cs] += gv * b[r * self.b_rs + c * self.b_cs];
                }
            }
        }
        if let Some(gb) = gb {
            for r in 0..self.rows {
                for c in 0..self.cols {
                    let gv = g[r * self.cols + c];
                    gb[r * self.b_rs + c * self.b_cs] += gv * a[r * self.a_rs + c * self.a_cs];
                }
            }
        }
    }
}

/// Row sums: `rows x cols -> rows x 1`.
pub fn sum_cols(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows).map(|r| a[r * cols..(r + 1) * cols].iter().sum()).collect()
}

/// Column-wise concatenation of same-height blocks.
pub fn concat_cols(parts: &[(&[f64], usize)], rows: usize) -> Vec<f64> {
    let cols: usize = parts.iter().map(|p| p.1).sum();
    let mut y = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for (data, w) in parts {
            y.extend_from_slice(&data[r * w..(r + 1) * w]);
        }
    }
    y
}

pub fn slice_cols(a: &[f64], rows: usize, cols: usize, start: usize, len: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * len);
    for r in 0..rows {
        y.extend_from_slice(&a[r * cols + start..r * cols + start + len]);
    }
    y
}

/// Numerically stable log-softmax of a single row.
pub fn log_softmax(a: &[f64]) -> Vec<f64> {
    let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    a.iter().map(|v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        let funs = [Fun::Silu, Fun::Tanh, Fun::Sigmoid, Fun::Sqrt, Fun::Recip, Fun::Exp];
        for f in funs {
            for &x in &[0.3, 1.7, 2.9] {
                for order in 0..2u8 {
                    let h = 1e-5;
                    let fd = (f.eval(order, x + h) - f.eval(order, x - h)) / (2.0 * h);
                    let an = f.eval(order + 1, x);
                    assert!((fd - an).abs() < 1e-7 * an.abs().max(1.0), "{f:?} order {order} at {x}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn broadcasting_product() {
        // (2x1) * (1x3) is an outer product.
        let b = Bcast::new(2, 1, 1, 3);
        assert_eq!(b.mul(&[1.0, 2.0], &[3.0, 4.0, 5.0]), vec![3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn log_softmax_is_shift_invariant() {
        let a = log_softmax(&[0.0, 1.0, 2.0]);
        let b = log_softmax(&[100.0, 101.0, 102.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let s: f64 = a.iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
