//! Explicit Runge-Kutta integrators: classic RK4 on a fixed grid and
//! Dormand-Prince 5(4) with step-size control.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum OdeConfig {
    Rk4 {
        steps: usize,
    },
    Dopri5 {
        rtol: f64,
        atol: f64,
        #[serde(default = "default_max_steps")]
        max_steps: usize,
    },
}

fn default_max_steps() -> usize {
    10_000
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig::dopri5(1e-4, 1e-4)
    }
}

impl OdeConfig {
    pub fn rk4(steps: usize) -> Self {
        OdeConfig::Rk4 { steps }
    }

    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        OdeConfig::Dopri5 {
            rtol,
            atol,
            max_steps: default_max_steps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            OdeConfig::Rk4 { steps } if steps == 0 => Err(Error::Config("RK4 needs at least one step".into())),
            OdeConfig::Dopri5 { rtol, atol, max_steps }
                if !(rtol > 0.0 && atol > 0.0 && rtol.is_finite() && atol.is_finite()) || max_steps == 0 =>
            {
                Err(Error::Config(format!(
                    "adaptive solver needs positive tolerances and step budget (rtol {rtol}, atol {atol}, max_steps {max_steps})"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Right-hand side `dy/dt = f(t, y)`.
pub trait Rhs {
    fn eval(&mut self, t: f64, y: &[f64]) -> Result<Vec<f64>>;
    /// The first `3k` state entries form `k` Euclidean 3-vectors. The
    /// adaptive solver scales their tolerance by the vector length, which
    /// makes its step sequence invariant under rotations of those vectors.
    fn spatial_vectors(&self) -> usize {
        0
    }
}

impl<F: FnMut(f64, &[f64]) -> Result<Vec<f64>>> Rhs for F {
    fn eval(&mut self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        self(t, y)
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub y: Vec<f64>,
    /// Accepted steps.
    pub steps: usize,
    /// Right-hand side evaluations.
    pub nfe: usize,
}

fn axpy_into(out: &mut [f64], y: &[f64], terms: &[(f64, &[f64])]) {
    for (k, o) in out.iter_mut().enumerate() {
        let mut v = y[k];
        for (c, d) in terms {
            v += c * d[k];
        }
        *o = v;
    }
}

fn check_finite(y: &[f64], t: f64) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite ODE state at t = {t}")))
    }
}

/// Integrates from `t0` to `t1` (either direction).
pub fn solve(f: &mut impl Rhs, y0: &[f64], t0: f64, t1: f64, cfg: &OdeConfig) -> Result<Solution> {
    cfg.validate()?;
    match *cfg {
        OdeConfig::Rk4 { steps } => rk4(f, y0, t0, t1, steps),
        OdeConfig::Dopri5 { rtol, atol, max_steps } => dopri5(f, y0, t0, t1, rtol, atol, max_steps),
    }
}

/// One classic RK4 step.
pub fn rk4_step(f: &mut impl Rhs, t: f64, y: &[f64], h: f64) -> Result<Vec<f64>> {
    let n = y.len();
    let mut tmp = vec![0.0; n];
    let k1 = f.eval(t, y)?;
    axpy_into(&mut tmp, y, &[(h / 2.0, &k1)]);
    let k2 = f.eval(t + h / 2.0, &tmp)?;
    axpy_into(&mut tmp, y, &[(h / 2.0, &k2)]);
    let k3 = f.eval(t + h / 2.0, &tmp)?;
    axpy_into(&mut tmp, y, &[(h, &k3)]);
    let k4 = f.eval(t + h, &tmp)?;
    let mut out = vec![0.0; n];
    axpy_into(&mut out, y, &[(h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)]);
    Ok(out)
}

/// Grid times `t0 + k (t1 − t0) / steps`.
pub fn rk4_grid(t0: f64, t1: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|k| if k == steps { t1 } else { t0 + (t1 - t0) * k as f64 / steps as f64 })
        .collect()
}

fn rk4(f: &mut impl Rhs, y0: &[f64], t0: f64, t1: f64, steps: usize) -> Result<Solution> {
    let grid = rk4_grid(t0, t1, steps);
    let mut y = y0.to_vec();
    for w in grid.windows(2) {
        y = rk4_step(f, w[0], &y, w[1] - w[0])?;
        check_finite(&y, w[1])?;
    }
    Ok(Solution {
        y,
        steps,
        nfe: 4 * steps,
    })
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Per-entry magnitude: vector length inside the spatial block, `|y_i|` after.
fn magnitudes(y: &[f64], vectors: usize) -> Vec<f64> {
    let mut m: Vec<f64> = y.iter().map(|v| v.abs()).collect();
    for c in y[..3 * vectors].chunks(3).zip(m.chunks_mut(3)) {
        let r = (c.0[0] * c.0[0] + c.0[1] * c.0[1] + c.0[2] * c.0[2]).sqrt();
        c.1.fill(r);
    }
    m
}

/// Weighted RMS of `v` with scales `atol + rtol * mag`.
fn rms(v: &[f64], mag: &[f64], rtol: f64, atol: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let s: f64 = v
        .iter()
        .zip(mag)
        .map(|(a, m)| (a / (atol + rtol * m)).powi(2))
        .sum();
    (s / v.len() as f64).sqrt()
}

/// Largest scaled error. Position entries count once per vertex through
/// their Euclidean length, which keeps the norm rotation-invariant.
fn max_norm(e: &[f64], mag: &[f64], vectors: usize, rtol: f64, atol: f64) -> f64 {
    let split = 3 * vectors;
    let spatial = e[..split]
        .chunks(3)
        .zip(mag[..split].chunks(3))
        .map(|(c, m)| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt() / (atol + rtol * m[0]));
    let scalar = e[split..].iter().zip(&mag[split..]).map(|(a, m)| a.abs() / (atol + rtol * m));
    spatial.chain(scalar).fold(0.0, f64::max)
}

fn max_mag(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x.max(*y)).collect()
}

fn dopri5(
    f: &mut impl Rhs,
    y0: &[f64],
    t0: f64,
    t1: f64,
    rtol: f64,
    atol: f64,
    max_steps: usize,
) -> Result<Solution> {
    let n = y0.len();
    let vectors = f.spatial_vectors().min(n / 3);
    let span = t1 - t0;
    let dir = span.signum();
    let mut y = y0.to_vec();
    let mut t = t0;
    if span == 0.0 {
        return Ok(Solution { y, steps: 0, nfe: 0 });
    }
    let mut k: Vec<Vec<f64>> = vec![Vec::new(); 7];
    k[0] = f.eval(t, &y)?;
    let mut nfe = 1;

    // Initial step guess (Hairer, Nørsett & Wanner II.4).
    let mag = magnitudes(&y, vectors);
    let d0 = rms(&y, &mag, rtol, atol);
    let d1 = rms(&k[0], &mag, rtol, atol);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(span.abs());
    let mut tmp = vec![0.0; n];
    axpy_into(&mut tmp, &y, &[(dir * h, &k[0])]);
    let f1 = f.eval(t + dir * h, &tmp)?;
    nfe += 1;
    let diff: Vec<f64> = f1.iter().zip(&k[0]).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff, &mag, rtol, atol) / h;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    h = (100.0 * h).min(h1).min(span.abs());

    let mut steps = 0;
    let mut attempts = 0;
    let mut ynew = vec![0.0; n];
    let mut err = vec![0.0; n];
    loop {
        if (t1 - t) * dir <= 0.0 {
            break;
        }
        if attempts >= max_steps {
            return Err(Error::Stiffness {
                max_steps,
                t,
                context: String::new(),
            });
        }
        attempts += 1;
        let last = (t + dir * h - t1) * dir >= -1e-12 * span.abs();
        let hs = if last { t1 - t } else { dir * h };
        for s in 1..7 {
            let terms: Vec<(f64, &[f64])> = (0..s).map(|j| (hs * A[s][j], k[j].as_slice())).collect();
            axpy_into(&mut tmp, &y, &terms);
            k[s] = f.eval(t + C[s] * hs, &tmp)?;
            nfe += 1;
        }
        // Stage 7 is evaluated at the fifth-order solution, which `tmp` holds.
        ynew.copy_from_slice(&tmp);
        for (i, e) in err.iter_mut().enumerate() {
            *e = hs * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>();
        }
        let en = max_norm(&err, &max_mag(&magnitudes(&y, vectors), &magnitudes(&ynew, vectors)), vectors, rtol, atol);
        if !en.is_finite() {
            h *= 0.2;
            if h < 1e-14 {
                return Err(Error::Numeric(format!("step size underflow at t = {t}")));
            }
            continue;
        }
        if en <= 1.0 {
            t = if last { t1 } else { t + hs };
            std::mem::swap(&mut y, &mut ynew);
            k.swap(0, 6);
            steps += 1;
            check_finite(&y, t)?;
        }
        let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
        let fac = if en > 1.0 { fac.min(1.0) } else { fac };
        h = (hs.abs() * fac).max(1e-14);
    }
    Ok(Solution { y, steps, nfe })
}
