//! 3D graphs, the rigid and permutation group actions on them, and the
//! vertex-vector layout used by the flow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub features: Vec<f64>,
}

/// A graph whose vertices carry a position in R^3 and a feature vector.
///
/// Edges are undirected and stored once, as `i < j`, sorted by `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph3D {
    positions: Vec<Vec3>,
    features: Vec<Vec<f64>>,
    feature_dim: usize,
    edges: Vec<Edge>,
    edge_dim: usize,
    globals: Vec<Vec<f64>>,
}

impl Graph3D {
    /// Builds a validated graph. Edge endpoints may be given in either order.
    pub fn new(
        positions: Vec<Vec3>,
        features: Vec<Vec<f64>>,
        edges: Vec<(usize, usize, Vec<f64>)>,
        globals: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let feature_dim = features.first().map_or(0, Vec::len);
        Self::with_dims(positions, features, feature_dim, edges, globals)
    }

    /// Like [`Graph3D::new`] but with an explicit feature width, which matters
    /// for graphs without vertices.
    pub fn with_dims(
        positions: Vec<Vec3>,
        features: Vec<Vec<f64>>,
        feature_dim: usize,
        edges: Vec<(usize, usize, Vec<f64>)>,
        globals: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = positions.len();
        if features.len() != n {
            return Err(Error::Size(format!(
                "{} positions but {} feature vectors",
                n,
                features.len()
            )));
        }
        if let Some(bad) = features.iter().position(|h| h.len() != feature_dim) {
            return Err(Error::Size(format!(
                "vertex {bad} has {} features, expected {feature_dim}",
                features[bad].len()
            )));
        }
        if positions.iter().flatten().chain(features.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidGraph("non-finite vertex value".into()));
        }
        let edge_dim = edges.first().map_or(0, |e| e.2.len());
        let mut canon = Vec::with_capacity(edges.len());
        for (a, b, e) in edges {
            if a == b {
                return Err(Error::InvalidGraph(format!("self loop at vertex {a}")));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if j >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) out of range for {n} vertices"
                )));
            }
            if e.len() != edge_dim {
                return Err(Error::Size(format!(
                    "edge ({a}, {b}) has {} features, expected {edge_dim}",
                    e.len()
                )));
            }
            canon.push(Edge { i, j, features: e });
        }
        canon.sort_by_key(|e| (e.i, e.j));
        if let Some(w) = canon.windows(2).find(|w| (w[0].i, w[0].j) == (w[1].i, w[1].j)) {
            return Err(Error::InvalidGraph(format!(
                "duplicate edge ({}, {})",
                w[0].i, w[0].j
            )));
        }
        Ok(Graph3D {
            positions,
            features,
            feature_dim,
            edges: canon,
            edge_dim,
            globals,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn globals(&self) -> &[Vec<f64>] {
        &self.globals
    }

    pub fn mean_position(&self) -> Vec3 {
        let n = self.positions.len().max(1) as f64;
        let mut m = [0.0; 3];
        for x in &self.positions {
            for c in 0..3 {
                m[c] += x[c];
            }
        }
        m.map(|v| v / n)
    }

    /// Neighbour lists derived from the edge list.
    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n_vertices()];
        for e in &self.edges {
            nb[e.i].push(e.j);
            nb[e.j].push(e.i);
        }
        for l in &mut nb {
            l.sort_unstable();
        }
        nb
    }

    /// Same graph with the vertex list replaced; edges and globals are kept.
    pub fn with_vertices(&self, positions: Vec<Vec3>, features: Vec<Vec<f64>>) -> Result<Self> {
        if positions.len() != self.n_vertices() {
            return Err(Error::Size(format!(
                "replacement has {} vertices, graph has {}",
                positions.len(),
                self.n_vertices()
            )));
        }
        let mut g = self.clone();
        if let Some(bad) = features.iter().position(|h| h.len() != self.feature_dim) {
            return Err(Error::Size(format!("replacement vertex {bad} has wrong feature width")));
        }
        g.positions = positions;
        g.features = features;
        Ok(g)
    }

    pub fn with_features(&self, features: Vec<Vec<f64>>) -> Result<Self> {
        self.with_vertices(self.positions.clone(), features)
    }

    /// Vertex list of this graph as a vertex vector.
    pub fn vertex_vector(&self) -> VertexVector {
        VertexVector::from_vertices(&self.positions, &self.features, self.feature_dim)
    }

    /// Replaces the vertex list by `devectorize(v)`.
    pub fn with_vertex_vector(&self, v: &VertexVector) -> Result<Self> {
        if v.feature_dim() != self.feature_dim {
            return Err(Error::Size("vertex vector feature width mismatch".into()));
        }
        let (x, h) = v.devectorize();
        self.with_vertices(x, h)
    }
}

/// Applies `T` to every position; everything else is untouched.
pub fn apply_rigid(t: &RigidTransform, g: &Graph3D) -> Graph3D {
    let mut out = g.clone();
    for x in &mut out.positions {
        *x = t.apply(x);
    }
    out
}

/// Vertex `i` of the result is vertex `p(i)` of the input; edges are
/// relabelled accordingly and re-canonicalised.
pub fn apply_perm(p: &Permutation, g: &Graph3D) -> Result<Graph3D> {
    let n = g.n_vertices();
    if p.len() != n {
        return Err(Error::Size(format!(
            "permutation of length {} applied to {} vertices",
            p.len(),
            n
        )));
    }
    let inv = p.inverse();
    let positions = p.map.iter().map(|&s| g.positions[s]).collect();
    let features = p.map.iter().map(|&s| g.features[s].clone()).collect();
    let mut edges: Vec<Edge> = g
        .edges
        .iter()
        .map(|e| {
            let (a, b) = (inv.map[e.i], inv.map[e.j]);
            Edge {
                i: a.min(b),
                j: a.max(b),
                features: e.features.clone(),
            }
        })
        .collect();
    edges.sort_by_key(|e| (e.i, e.j));
    Ok(Graph3D {
        positions,
        features,
        feature_dim: g.feature_dim,
        edges,
        edge_dim: g.edge_dim,
        globals: g.globals.clone(),
    })
}

/// An element of E(3): `x -> R x + t` with `R` orthogonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Checks orthogonality and `det = ±1` to `1e-12`.
    pub fn new(rotation: [[f64; 3]; 3], translation: Vec3) -> Result<Self> {
        let t = RigidTransform {
            rotation,
            translation,
        };
        let mut err: f64 = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3).map(|k| rotation[k][a] * rotation[k][b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                err = err.max((dot - want).abs());
            }
        }
        if err > 1e-12 || (t.det().abs() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "rotation matrix is not orthogonal (max |RᵀR - I| = {err:e})"
            )));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite translation".into()));
        }
        Ok(t)
    }

    pub fn translation(t: Vec3) -> Self {
        RigidTransform {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rotation by `angle` radians about `axis` (normalised internally).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let [x, y, z] = axis.map(|v| v / n);
        let (s, c) = angle.sin_cos();
        let k = 1.0 - c;
        RigidTransform {
            rotation: [
                [c + x * x * k, x * y * k - z * s, x * z * k + y * s],
                [y * x * k + z * s, c + y * y * k, y * z * k - x * s],
                [z * x * k - y * s, z * y * k + x * s, c + z * z * k],
            ],
            translation: [0.0; 3],
        }
    }

    /// Uniform draw from O(3) (QR of a Gaussian matrix with the diagonal of
    /// `R` made positive) plus a Gaussian translation of scale `translation_scale`.
    pub fn random(rng: &mut SeededRng, translation_scale: f64) -> Self {
        let mut cols = [[0.0; 3]; 3];
        for col in &mut cols {
            for v in col.iter_mut() {
                *v = rng::normal(rng);
            }
        }
        // Modified Gram-Schmidt; the resulting R has a positive diagonal.
        let mut q = [[0.0; 3]; 3];
        for k in 0..3 {
            let mut v = cols[k];
            for prev in q.iter().take(k) {
                let d: f64 = (0..3).map(|c| prev[c] * v[c]).sum();
                for c in 0..3 {
                    v[c] -= d * prev[c];
                }
            }
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            q[k] = v.map(|x| x / n);
        }
        let mut rotation = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                rotation[r][c] = q[c][r];
            }
        }
        let translation = [0, 1, 2].map(|_| translation_scale * rng::normal(rng));
        RigidTransform {
            rotation,
            translation,
        }
    }

    /// Uniform draw from SO(3).
    pub fn random_proper(rng: &mut SeededRng, translation_scale: f64) -> Self {
        let mut t = Self::random(rng, translation_scale);
        if t.det() < 0.0 {
            for row in &mut t.rotation {
                row[2] = -row[2];
            }
        }
        t
    }

    pub fn det(&self) -> f64 {
        let r = &self.rotation;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    pub fn rotate(&self, x: &Vec3) -> Vec3 {
        let r = &self.rotation;
        [0, 1, 2].map(|a| r[a][0] * x[0] + r[a][1] * x[1] + r[a][2] * x[2])
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        let y = self.rotate(x);
        [0, 1, 2].map(|a| y[a] + self.translation[a])
    }

    /// The rotation part alone, `T_rot`.
    pub fn rotation_only(&self) -> Self {
        RigidTransform {
            rotation: self.rotation,
            translation: [0.0; 3],
        }
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &RigidTransform) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                rotation[a][b] = (0..3).map(|k| self.rotation[a][k] * first.rotation[k][b]).sum();
            }
        }
        RigidTransform {
            rotation,
            translation: self.apply(&first.translation),
        }
    }

    pub fn inverse(&self) -> Self {
        let mut rt = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                rt[a][b] = self.rotation[b][a];
            }
        }
        let inv = RigidTransform {
            rotation: rt,
            translation: [0.0; 3],
        };
        let t = inv.rotate(&self.translation);
        RigidTransform {
            rotation: rt,
            translation: t.map(|v| -v),
        }
    }

    /// Parses `"rx,ry,rz,tx,ty,tz"`: a rotation vector (axis times angle in
    /// radians) followed by a translation.
    pub fn parse_rotvec(spec: &str) -> Result<Self> {
        let vals: Vec<f64> = spec
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad rigid transform {spec:?}: {e}")))?;
        if vals.len() != 6 {
            return Err(Error::Config(format!(
                "rigid transform needs 6 comma-separated numbers, got {}",
                vals.len()
            )));
        }
        let axis = [vals[0], vals[1], vals[2]];
        let angle = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let mut t = if angle > 0.0 {
            Self::from_axis_angle(axis, angle)
        } else {
            Self::identity()
        };
        t.translation = [vals[3], vals[4], vals[5]];
        Ok(t)
    }
}

/// A bijection of `{0..n-1}`; acting on a vertex list, output vertex `i` is
/// input vertex `map[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::Domain(format!("{map:?} is not a permutation")));
            }
        }
        Ok(Permutation { map })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            map: (0..n).collect(),
        }
    }

    pub fn random(rng: &mut SeededRng, n: usize) -> Self {
        use rand::seq::SliceRandom;
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Permutation { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &m) in self.map.iter().enumerate() {
            inv[m] = i;
        }
        Permutation { map: inv }
    }

    /// The permutation whose action equals applying `first` and then `self`.
    pub fn compose(&self, first: &Permutation) -> Self {
        Permutation {
            map: self.map.iter().map(|&i| first.map[i]).collect(),
        }
    }
}

/// Flattened vertex list: all positions first, then all features.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexVector {
    data: Vec<f64>,
    n_vertices: usize,
    feature_dim: usize,
}

impl VertexVector {
    pub fn new(data: Vec<f64>, n_vertices: usize, feature_dim: usize) -> Result<Self> {
        if data.len() != (feature_dim + 3) * n_vertices {
            return Err(Error::Size(format!(
                "vertex vector of length {} cannot hold {} vertices with {} features",
                data.len(),
                n_vertices,
                feature_dim
            )));
        }
        Ok(VertexVector {
            data,
            n_vertices,
            feature_dim,
        })
    }

    pub fn from_vertices(positions: &[Vec3], features: &[Vec<f64>], feature_dim: usize) -> Self {
        let n = positions.len();
        let mut data = Vec::with_capacity((feature_dim + 3) * n);
        data.extend(positions.iter().flatten());
        data.extend(features.iter().flatten());
        VertexVector {
            data,
            n_vertices: n,
            feature_dim,
        }
    }

    pub fn devectorize(&self) -> (Vec<Vec3>, Vec<Vec<f64>>) {
        let n = self.n_vertices;
        let x = (0..n)
            .map(|i| [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]])
            .collect();
        let d = self.feature_dim;
        let h = (0..n)
            .map(|i| self.data[3 * n + d * i..3 * n + d * (i + 1)].to_vec())
            .collect();
        (x, h)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn position(&self, i: usize) -> Vec3 {
        [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
    }

    /// `T v`: rotate and translate positions, keep features.
    pub fn apply_rigid(&self, t: &RigidTransform) -> Self {
        let mut out = self.clone();
        for i in 0..self.n_vertices {
            let y = t.apply(&self.position(i));
            out.data[3 * i..3 * i + 3].copy_from_slice(&y);
        }
        out
    }

    /// `π v`, block-wise on positions and features.
    pub fn apply_perm(&self, p: &Permutation) -> Result<Self> {
        if p.len() != self.n_vertices {
            return Err(Error::Size("permutation length mismatch".into()));
        }
        let (x, h) = self.devectorize();
        let xs: Vec<Vec3> = p.as_slice().iter().map(|&s| x[s]).collect();
        let hs: Vec<Vec<f64>> = p.as_slice().iter().map(|&s| h[s].clone()).collect();
        Ok(Self::from_vertices(&xs, &hs, self.feature_dim))
    }
}

/// Line-oriented JSON form of a graph; field order is part of the format.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphJson {
    pub n: usize,
    pub x: Vec<Vec3>,
    pub h: Vec<Vec<f64>>,
    pub edges: Vec<(usize, usize, Vec<f64>)>,
    pub globals: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_h: Option<usize>,
}

impl From<&Graph3D> for GraphJson {
    fn from(g: &Graph3D) -> Self {
        GraphJson {
            n: g.n_vertices(),
            x: g.positions.clone(),
            h: g.features.clone(),
            edges: g
                .edges
                .iter()
                .map(|e| (e.i, e.j, e.features.clone()))
                .collect(),
            globals: g.globals.clone(),
            d_h: (g.n_vertices() == 0 && g.feature_dim > 0).then_some(g.feature_dim),
        }
    }
}

impl TryFrom<GraphJson> for Graph3D {
    type Error = Error;

    fn try_from(j: GraphJson) -> Result<Self> {
        if j.n != j.x.len() {
            return Err(Error::InvalidGraph(format!(
                "n = {} but {} positions",
                j.n,
                j.x.len()
            )));
        }
        let d = j.d_h.unwrap_or_else(|| j.h.first().map_or(0, Vec::len));
        Graph3D::with_dims(j.x, j.h, d, j.edges, j.globals)
    }
}

impl Serialize for Graph3D {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GraphJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Graph3D {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = GraphJson::deserialize(d)?;
        Graph3D::try_from(j).map_err(serde::de::Error::custom)
    }
}

impl Graph3D {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serialisation is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
