use crate::error::{Error, Result};
use crate::graph3d::{Graph3D, Vec3, VertexVector};

/// The centering map `u = Ω v + ω` that subtracts the complex mean from each
/// complement position and leaves features alone.
///
/// With `α = N / (N + N̂)` the coordinate block of `Ω` is
/// `I − (α/N) 1⊗I₃` and `ω = −(1−α) 1⊗x̂_av`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCentering {
    pub alpha: f64,
    pub n: usize,
    pub n_base: usize,
    pub base_mean: Vec3,
}

impl AffineCentering {
    pub fn new(n: usize, base: &Graph3D) -> Result<Self> {
        if base.n_vertices() == 0 {
            return Err(Error::DegenerateBase);
        }
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let n_base = base.n_vertices();
        Ok(AffineCentering {
            alpha: n as f64 / (n + n_base) as f64,
            n,
            n_base,
            base_mean: base.mean_position(),
        })
    }

    /// `ln |det Ω| = 3 ln(1 − α) = 3 ln(N̂ / (N + N̂))`.
    pub fn log_det(&self) -> f64 {
        3.0 * (self.n_base as f64 / (self.n + self.n_base) as f64).ln()
    }

    fn check(&self, v: &VertexVector) -> Result<()> {
        if v.n_vertices() != self.n {
            return Err(Error::Size(format!(
                "vertex vector has {} vertices, centering built for {}",
                v.n_vertices(),
                self.n
            )));
        }
        Ok(())
    }

    fn mean3(data: &[f64], n: usize) -> Vec3 {
        let mut m = [0.0; 3];
        for i in 0..n {
            for c in 0..3 {
                m[c] += data[3 * i + c];
            }
        }
        m.map(|x| x / n as f64)
    }

    /// `u = Ω v + ω`.
    pub fn forward(&self, v: &VertexVector) -> Result<VertexVector> {
        self.check(v)?;
        let mut out = v.as_slice().to_vec();
        let xav = Self::mean3(&out, self.n);
        let shift: Vec3 = std::array::from_fn(|c| self.alpha * xav[c] + (1.0 - self.alpha) * self.base_mean[c]);
        for i in 0..self.n {
            for c in 0..3 {
                out[3 * i + c] -= shift[c];
            }
        }
        VertexVector::new(out, self.n, v.feature_dim())
    }

    /// `v = Ω⁻¹ (u − ω)`.
    pub fn inverse(&self, u: &VertexVector) -> Result<VertexVector> {
        self.check(u)?;
        let mut out = u.as_slice().to_vec();
        let uav = Self::mean3(&out, self.n);
        let r = self.alpha / (1.0 - self.alpha);
        let shift: Vec3 = std::array::from_fn(|c| self.base_mean[c] + r * uav[c]);
        for i in 0..self.n {
            for c in 0..3 {
                out[3 * i + c] += shift[c];
            }
        }
        VertexVector::new(out, self.n, u.feature_dim())
    }

    /// Dense `Ω` for a given feature width, row-major.
    pub fn omega_matrix(&self, feature_dim: usize) -> Vec<Vec<f64>> {
        let n = self.n;
        let dim = (3 + feature_dim) * n;
        let mut m = vec![vec![0.0; dim]; dim];
        for (k, row) in m.iter_mut().enumerate() {
            row[k] = 1.0;
        }
        for i in 0..n {
            for j in 0..n {
                for c in 0..3 {
                    m[3 * i + c][3 * j + c] -= self.alpha / n as f64;
                }
            }
        }
        m
    }

    /// Dense `ω`.
    pub fn omega_vector(&self, feature_dim: usize) -> Vec<f64> {
        let mut w = vec![0.0; (3 + feature_dim) * self.n];
        for i in 0..self.n {
            for c in 0..3 {
                w[3 * i + c] = -(1.0 - self.alpha) * self.base_mean[c];
            }
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use nalgebra::DMatrix;

    fn base(n: usize, seed: u64) -> Graph3D {
        let mut r = rng::seeded(seed);
        let x = (0..n).map(|_| [rng::normal(&mut r), rng::normal(&mut r), rng::normal(&mut r)]).collect();
        Graph3D::with_dims(x, vec![vec![]; n], 0, vec![], vec![]).unwrap()
    }

    fn det(m: &[Vec<f64>]) -> f64 {
        let n = m.len();
        DMatrix::from_fn(n, n, |i, j| m[i][j]).determinant()
    }

    #[test]
    fn alpha_formula() {
        let c = AffineCentering::new(30, &base(300, 1)).unwrap();
        assert!((c.alpha - 1.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn single_vertex_block_is_scaled_identity() {
        let c = AffineCentering::new(1, &base(4, 2)).unwrap();
        let m = c.omega_matrix(0);
        for (i, row) in m.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let want = if i == j { 1.0 - c.alpha } else { 0.0 };
                assert!((v - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn determinant_brute_force() {
        let c = AffineCentering::new(2, &base(3, 3)).unwrap();
        assert!((det(&c.omega_matrix(2)).abs() - 0.216).abs() < 1e-12);
        for n in 1..=5 {
            for nb in 1..=5 {
                let c = AffineCentering::new(n, &base(nb, 4)).unwrap();
                let d = det(&c.omega_matrix(1)).abs().ln();
                assert!((d - c.log_det()).abs() < 1e-12, "N={n} N̂={nb}");
            }
        }
    }

    #[test]
    fn forward_inverse_round_trip_and_complex_mean() {
        let b = base(7, 5);
        let c = AffineCentering::new(4, &b).unwrap();
        let mut r = rng::seeded(6);
        let v = VertexVector::new(rng::normal_vec(&mut r, 20), 4, 2).unwrap();
        let u = c.forward(&v).unwrap();
        let back = c.inverse(&u).unwrap();
        for (a, b) in back.as_slice().iter().zip(v.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(&u.as_slice()[12..], &v.as_slice()[12..]);
        let xav = AffineCentering::mean3(v.as_slice(), 4);
        let bm = b.mean_position();
        let total = 4.0 + 7.0;
        for i in 0..4 {
            for k in 0..3 {
                let mean = (4.0 * xav[k] + 7.0 * bm[k]) / total;
                assert!((u.as_slice()[3 * i + k] - (v.as_slice()[3 * i + k] - mean)).abs() < 1e-12);
            }
        }
        // Dense form agrees.
        let m = c.omega_matrix(2);
        let w = c.omega_vector(2);
        for (k, row) in m.iter().enumerate() {
            let y: f64 = row.iter().zip(v.as_slice()).map(|(a, b)| a * b).sum::<f64>() + w[k];
            assert!((y - u.as_slice()[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_base_is_degenerate() {
        let empty = Graph3D::with_dims(vec![], vec![], 0, vec![], vec![]).unwrap();
        assert!(matches!(AffineCentering::new(2, &empty), Err(Error::DegenerateBase)));
    }
}
