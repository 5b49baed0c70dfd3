//! Joint principal-component projection of predictive embeddings and latent
//! actions.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::{Model, Prepared};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    H,
    Z,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::H => "h",
            Source::Z => "z",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSample {
    pub source: Source,
    pub split: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub source: Source,
    pub split: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub points: Vec<ProjectedPoint>,
    /// Share of the pooled variance carried by each kept component.
    pub explained: Vec<f64>,
    /// Fewer than two components could be formed.
    pub rank_deficient: bool,
}

const MIN_PER_SOURCE: usize = 10;

pub fn project_embeddings(samples: &[EmbeddingSample]) -> Result<Projection> {
    for src in [Source::H, Source::Z] {
        let n = samples.iter().filter(|s| s.source == src).count();
        if n < MIN_PER_SOURCE {
            return Err(Error::InvalidArgument(format!("{n} {} samples, need at least {MIN_PER_SOURCE}", src.as_str())));
        }
    }
    let d = samples[0].values.len();
    if d == 0 || samples.iter().any(|s| s.values.len() != d) {
        return Err(Error::Shape("embedding samples of unequal width".into()));
    }
    let n = samples.len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(&s.values) {
            *m += v / n as f64;
        }
    }
    let x = DMatrix::from_fn(n, d, |i, j| samples[i].values[j] - mean[j]);
    let cov = (x.transpose() * &x) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let top = eig.eigenvalues[order[0]].max(0.0);
    let kept: Vec<usize> = order
        .iter()
        .copied()
        .take(2)
        .filter(|&k| top > 0.0 && eig.eigenvalues[k] > 1e-12 * top)
        .collect();
    let axes: Vec<Vec<f64>> = kept
        .iter()
        .map(|&k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            // sign convention: largest-magnitude coordinate positive
            let (mut best, mut mag) = (0, 0.0);
            for (j, c) in v.iter().enumerate() {
                if c.abs() > mag + 1e-12 {
                    best = j;
                    mag = c.abs();
                }
            }
            if v[best] < 0.0 {
                v.iter_mut().for_each(|c| *c = -*c);
            }
            v
        })
        .collect();
    let coord = |i: usize, a: Option<&Vec<f64>>| a.map_or(0.0, |axis| (0..d).map(|j| x[(i, j)] * axis[j]).sum());
    let points = samples
        .iter()
        .enumerate()
        .map(|(i, s)| ProjectedPoint { x: coord(i, axes.first()), y: coord(i, axes.get(1)), source: s.source, split: s.split.clone() })
        .collect();
    let explained = kept.iter().map(|&k| if total > 0.0 { eig.eigenvalues[k] / total } else { 0.0 }).collect();
    Ok(Projection { points, explained, rank_deficient: axes.len() < 2 })
}

impl Projection {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,source,split\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{},{}\n", p.x, p.y, p.source.as_str(), p.split));
        }
        s
    }
}

/// Per-slot predictive embeddings and latent actions for every chunk of the
/// given episodes, plus their mean absolute difference.
pub fn collect_embeddings(model: &Model, episodes: &[Prepared], split: &str, limit: usize) -> Result<(Vec<EmbeddingSample>, f64)> {
    let mut out = Vec::new();
    let (mut l1, mut count) = (0.0, 0usize);
    for p in episodes.iter().take(limit) {
        for i in 1..=p.boundaries.len() {
            let h = model.predictive_embedding(p, i)?;
            let z = model.action_latents(p, i)?;
            for r in 0..h.rows() {
                l1 += h.row(r).iter().zip(z.row(r)).map(|(a, b)| (a - b).abs()).sum::<f64>();
                count += h.cols();
                out.push(EmbeddingSample { source: Source::H, split: split.to_string(), values: h.row(r).to_vec() });
                out.push(EmbeddingSample { source: Source::Z, split: split.to_string(), values: z.row(r).to_vec() });
            }
        }
    }
    Ok((out, if count == 0 { 0.0 } else { l1 / count as f64 }))
}
