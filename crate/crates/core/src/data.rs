//! Synthetic base/complement pairs and their JSONL storage.
//!
//! A base graph is a random point cloud with typed vertices and kNN edges. Its
//! complement sits in a "pocket" just outside the base along a random
//! direction, with features and edges that depend on the nearby base.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph3d::{apply_rigid, Graph3D, RigidTransform, Vec3};
use crate::rng::{self, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Complex {
    pub base: Graph3D,
    pub complement: Graph3D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_complexes: usize,
    pub seed: u64,
    pub base_min: usize,
    pub base_max: usize,
    pub base_radius: f64,
    pub base_types: usize,
    pub base_knn: usize,
    /// Distance from the pocket vertex to the complement centre.
    pub pocket_offset: f64,
    /// Spread of complement vertices; draws are truncated at `3σ`.
    pub pocket_sigma: f64,
    pub complement_types: usize,
    pub complement_knn: usize,
    /// Complement edges shorter than this are type 0, longer ones type 1.
    pub short_edge: f64,
    pub translation_scale: f64,
    /// Width of the base size global, an ordinal code `[N̂ ≥ k]` for `k = 1..=size_levels`.
    pub size_levels: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_complexes: 500,
            seed: 0,
            base_min: 8,
            base_max: 28,
            base_radius: 1.0,
            base_types: 4,
            base_knn: 3,
            pocket_offset: 1.5,
            pocket_sigma: 0.3,
            complement_types: 2,
            complement_knn: 2,
            short_edge: 0.6,
            translation_scale: 3.0,
            size_levels: 40,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.base_min == 0 || self.base_min > self.base_max {
            return bad("need 1 <= base_min <= base_max");
        }
        if self.base_types == 0 || self.complement_types == 0 {
            return bad("vertex type counts must be positive");
        }
        if self.size_levels < self.base_max {
            return bad("size_levels must cover base_max");
        }
        if !(self.pocket_sigma > 0.0 && self.base_radius > 0.0) {
            return bad("pocket_sigma and base_radius must be positive");
        }
        Ok(())
    }

    /// Complement vertex count for a base of `n_base` vertices.
    pub fn complement_size(n_base: usize) -> usize {
        ((n_base as f64 / 4.0).round() as usize).max(1)
    }

    pub fn base_feature_dim(&self) -> usize {
        self.base_types
    }

    pub fn complement_feature_dim(&self) -> usize {
        self.complement_types + 1
    }
}

fn dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn one_hot(k: usize, n: usize) -> Vec<f64> {
    (0..n).map(|i| (i == k) as u8 as f64).collect()
}

/// Ordinal code of a vertex count: entry `k - 1` is 1 when `n ≥ k`.
pub fn size_code(n: usize, levels: usize) -> Vec<f64> {
    (1..=levels).map(|k| (n >= k) as u8 as f64).collect()
}

/// Undirected kNN edges, each pair once.
fn knn_pairs(x: &[Vec3], k: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..x.len() {
        let mut order: Vec<usize> = (0..x.len()).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dist(&x[i], &x[a]).total_cmp(&dist(&x[i], &x[b])));
        for &j in order.iter().take(k) {
            let p = (i.min(j), i.max(j));
            if !pairs.contains(&p) {
                pairs.push(p);
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

fn in_ball(rng: &mut SeededRng, r: f64) -> Vec3 {
    loop {
        let v: Vec3 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        if v.iter().map(|a| a * a).sum::<f64>() <= 1.0 {
            return v.map(|a| a * r);
        }
    }
}

fn truncated_normal(rng: &mut SeededRng, sigma: f64) -> Vec3 {
    loop {
        let v = [rng::normal(rng), rng::normal(rng), rng::normal(rng)];
        if v.iter().map(|a| a * a).sum::<f64>() <= 9.0 {
            return v.map(|a| a * sigma);
        }
    }
}

/// Complex `index` of the dataset, plus its pocket vertex position.
pub fn synthesize(cfg: &SynthConfig, index: usize) -> Result<(Complex, Vec3)> {
    let mut r = rng::stream(cfg.seed, index as u64);
    let n_base = r.random_range(cfg.base_min..=cfg.base_max);
    let xb: Vec<Vec3> = (0..n_base).map(|_| in_ball(&mut r, cfg.base_radius)).collect();
    let types: Vec<usize> = (0..n_base).map(|_| r.random_range(0..cfg.base_types)).collect();
    let hb = types.iter().map(|&t| one_hot(t, cfg.base_types)).collect();
    let eb = knn_pairs(&xb, cfg.base_knn)
        .into_iter()
        .map(|(i, j)| (i, j, vec![dist(&xb[i], &xb[j])]))
        .collect();
    let base = Graph3D::new(xb.clone(), hb, eb, vec![size_code(n_base, cfg.size_levels)])?;

    let dir = rng::unit_vector(&mut r);
    let proj = |p: &Vec3| p[0] * dir[0] + p[1] * dir[1] + p[2] * dir[2];
    let pocket = *xb.iter().max_by(|a, b| proj(a).total_cmp(&proj(b))).unwrap();
    let centre: Vec3 = std::array::from_fn(|k| pocket[k] + cfg.pocket_offset * dir[k]);

    let n = SynthConfig::complement_size(n_base);
    let xc: Vec<Vec3> = (0..n)
        .map(|_| {
            let e = truncated_normal(&mut r, cfg.pocket_sigma);
            std::array::from_fn(|k| centre[k] + e[k])
        })
        .collect();
    let mut ctypes = Vec::with_capacity(n);
    let hc = xc
        .iter()
        .map(|p| {
            let nearest = (0..n_base).min_by(|&a, &b| dist(p, &xb[a]).total_cmp(&dist(p, &xb[b]))).unwrap();
            let t = types[nearest] % cfg.complement_types;
            ctypes.push(t);
            let close = xb.iter().filter(|q| dist(p, q) < 1.0).count().min(2);
            let mut h = one_hot(t, cfg.complement_types);
            h.push(close as f64);
            h
        })
        .collect();
    let ec = knn_pairs(&xc, cfg.complement_knn)
        .into_iter()
        .map(|(i, j)| (i, j, one_hot((dist(&xc[i], &xc[j]) >= cfg.short_edge) as usize, 2)))
        .collect();
    let mut counts = vec![0usize; cfg.complement_types];
    ctypes.iter().for_each(|&t| counts[t] += 1);
    let majority = (0..cfg.complement_types).max_by_key(|&t| (counts[t], usize::MAX - t)).unwrap();
    let globals = vec![one_hot(majority, cfg.complement_types), one_hot((n >= 4) as usize, 2)];
    let complement = Graph3D::new(xc, hc, ec, globals)?;

    let t = RigidTransform::random(&mut r, cfg.translation_scale);
    Ok((
        Complex {
            base: apply_rigid(&t, &base),
            complement: apply_rigid(&t, &complement),
        },
        t.apply(&pocket),
    ))
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<Complex>> {
    cfg.validate()?;
    (0..cfg.n_complexes).map(|i| synthesize(cfg, i).map(|c| c.0)).collect()
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Writes one `{base, complement}` object per line, gzipped for `.gz` paths.
pub fn save(path: &Path, data: &[Complex]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w: Box<dyn Write> = if is_gz(path) {
        Box::new(GzEncoder::new(BufWriter::new(f), flate2::Compression::default()))
    } else {
        Box::new(BufWriter::new(f))
    };
    for c in data {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<Complex>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let r: Box<dyn Read> = if is_gz(path) {
        Box::new(GzDecoder::new(f))
    } else {
        Box::new(f)
    };
    parse_lines(BufReader::new(r)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        e => e,
    })
}

/// Parses JSONL, skipping blank lines. Errors carry 1-based line numbers.
pub fn parse_lines(r: impl BufRead) -> Result<Vec<Complex>> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let c = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: k + 1,
            message: e.to_string(),
        })?;
        out.push(c);
    }
    Ok(out)
}

/// Shuffled `(train, validation)` indices with `round(fraction · n)` held out.
pub fn split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("validation fraction must be in [0, 1), got {fraction}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let n_val = (fraction * n as f64).round() as usize;
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_complexes: 20,
            seed: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn sizes_follow_the_quarter_rule() {
        assert_eq!(SynthConfig::complement_size(1), 1);
        assert_eq!(SynthConfig::complement_size(8), 2);
        assert_eq!(SynthConfig::complement_size(10), 3);
        assert_eq!(SynthConfig::complement_size(28), 7);
        for c in generate(&small()).unwrap() {
            let nb = c.base.n_vertices();
            assert!((8..=28).contains(&nb));
            assert_eq!(c.complement.n_vertices(), SynthConfig::complement_size(nb));
            assert_eq!(c.base.globals()[0], size_code(nb, 40));
        }
    }

    #[test]
    fn features_and_edges_are_well_formed() {
        for c in generate(&small()).unwrap() {
            assert_eq!(c.base.feature_dim(), 4);
            assert!(c.base.edges().iter().all(|e| e.features.len() == 1 && e.features[0] > 0.0));
            assert_eq!(c.complement.feature_dim(), 3);
            for h in c.complement.features() {
                assert_eq!(h[0] + h[1], 1.0);
                assert!(h[2] == h[2].floor() && (0.0..=2.0).contains(&h[2]));
            }
            for e in c.complement.edges() {
                assert_eq!(e.features.iter().sum::<f64>(), 1.0);
            }
            let g = c.complement.globals();
            assert_eq!(g.len(), 2);
            assert_eq!(g[1][1], (c.complement.n_vertices() >= 4) as u8 as f64);
        }
    }

    #[test]
    fn generation_is_seeded_and_order_independent() {
        let a = generate(&small()).unwrap();
        assert_eq!(a, generate(&small()).unwrap());
        assert_eq!(a[7], synthesize(&small(), 7).unwrap().0);
        let other = SynthConfig { seed: 4, ..small() };
        assert_ne!(a[0], generate(&other).unwrap()[0]);
    }

    #[test]
    fn complement_sits_at_the_pocket_offset() {
        let cfg = SynthConfig::default();
        let mut total = 0.0;
        for i in 0..cfg.n_complexes {
            let (c, pocket) = synthesize(&cfg, i).unwrap();
            total += dist(&c.complement.mean_position(), &pocket);
            for x in c.complement.positions() {
                assert!(dist(x, &pocket) <= cfg.pocket_offset + 3.0 * cfg.pocket_sigma + 1e-9);
            }
        }
        let mean = total / cfg.n_complexes as f64;
        assert!((mean - cfg.pocket_offset).abs() <= 0.1 * cfg.pocket_offset, "{mean}");
    }

    #[test]
    fn jsonl_round_trip_plain_and_gzip() {
        let data = generate(&SynthConfig { n_complexes: 5, ..small() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for name in ["d.jsonl", "d.jsonl.gz"] {
            let p = dir.path().join(name);
            save(&p, &data).unwrap();
            assert_eq!(load(&p).unwrap(), data);
        }
    }

    #[test]
    fn parse_errors_report_the_line() {
        let data = generate(&SynthConfig { n_complexes: 2, ..small() }).unwrap();
        let good = serde_json::to_string(&data[0]).unwrap();
        let text = format!("{good}\n\n{{\"base\": 1}}\n");
        match parse_lines(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn split_partitions_indices() {
        let (tr, va) = split(10, 0.3, 1).unwrap();
        assert_eq!((tr.len(), va.len()), (7, 3));
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split(10, 0.3, 1).unwrap(), (tr, va));
        assert!(split(10, 1.0, 1).is_err());
    }
}
