//! Grouped residual vector quantization.
//!
//! A `code_dim` vector is split into `groups` equal sub-vectors; each is
//! quantized by `levels` successive nearest-neighbour searches, each search
//! operating on the residual left by the previous level. Codeword 0 of every
//! level is the zero vector and is never updated, so adding a level can never
//! increase the residual.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodebookPart {
    Wrist,
    Finger,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub part: CodebookPart,
    groups: usize,
    levels: usize,
    entries: usize,
    code_dim: usize,
    /// `[group][level][entry][sub_dim]`, flattened.
    codewords: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Quantized {
    /// Group-major, level-minor.
    pub indices: Vec<u32>,
    pub quantized: Vec<f64>,
    pub residual_norm: f64,
}

impl Codebook {
    /// All-zero codebook.
    pub fn new(part: CodebookPart, groups: usize, levels: usize, entries: usize, code_dim: usize) -> Result<Self> {
        if groups == 0 || levels == 0 || entries == 0 {
            return Err(Error::InvalidArgument("groups, levels and entries must be positive".into()));
        }
        if code_dim % groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "code_dim {code_dim} not divisible into {groups} groups"
            )));
        }
        Ok(Self { part, groups, levels, entries, code_dim, codewords: vec![0.0; code_dim * levels * entries] })
    }

    pub fn from_values(
        part: CodebookPart,
        groups: usize,
        levels: usize,
        entries: usize,
        code_dim: usize,
        codewords: Vec<f64>,
    ) -> Result<Self> {
        let mut cb = Self::new(part, groups, levels, entries, code_dim)?;
        if codewords.len() != cb.codewords.len() {
            return shape_err(format!("expected {} codeword values, got {}", cb.codewords.len(), codewords.len()));
        }
        cb.codewords = codewords;
        Ok(cb)
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn entries(&self) -> usize {
        self.entries
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    pub fn sub_dim(&self) -> usize {
        self.code_dim / self.groups
    }

    pub fn values(&self) -> &[f64] {
        &self.codewords
    }

    fn offset(&self, group: usize, level: usize, entry: usize) -> usize {
        ((group * self.levels + level) * self.entries + entry) * self.sub_dim()
    }

    pub fn codeword(&self, group: usize, level: usize, entry: usize) -> &[f64] {
        let o = self.offset(group, level, entry);
        &self.codewords[o..o + self.sub_dim()]
    }

    pub fn codeword_mut(&mut self, group: usize, level: usize, entry: usize) -> &mut [f64] {
        let o = self.offset(group, level, entry);
        let d = self.sub_dim();
        &mut self.codewords[o..o + d]
    }

    pub fn is_finite(&self) -> bool {
        self.codewords.iter().all(|v| v.is_finite())
    }

    /// Copy keeping only the first `levels` levels.
    pub fn truncated(&self, levels: usize) -> Result<Self> {
        if levels == 0 || levels > self.levels {
            return Err(Error::InvalidArgument(format!("cannot truncate {} levels to {levels}", self.levels)));
        }
        let mut out = Self::new(self.part, self.groups, levels, self.entries, self.code_dim)?;
        for g in 0..self.groups {
            for l in 0..levels {
                for e in 0..self.entries {
                    out.codeword_mut(g, l, e).copy_from_slice(self.codeword(g, l, e));
                }
            }
        }
        Ok(out)
    }

    /// Index of the nearest codeword to `target` at `(group, level)`, ties to
    /// the lowest index.
    pub fn nearest(&self, group: usize, level: usize, target: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for e in 0..self.entries {
            let d: f64 = self
                .codeword(group, level, e)
                .iter()
                .zip(target)
                .map(|(c, t)| (c - t) * (c - t))
                .sum();
            if d < best_d {
                best_d = d;
                best = e;
            }
        }
        best
    }

    /// Sum of the selected codewords, group by group.
    pub fn decode(&self, indices: &[u32]) -> Result<Vec<f64>> {
        if indices.len() != self.groups * self.levels {
            return shape_err(format!("expected {} indices, got {}", self.groups * self.levels, indices.len()));
        }
        let sd = self.sub_dim();
        let mut out = vec![0.0; self.code_dim];
        for g in 0..self.groups {
            for l in 0..self.levels {
                let e = indices[g * self.levels + l];
                if e as usize >= self.entries {
                    return Err(Error::TokenOutOfRange { id: e, vocab: self.entries as u32 });
                }
                for (o, c) in out[g * sd..(g + 1) * sd].iter_mut().zip(self.codeword(g, l, e as usize)) {
                    *o += c;
                }
            }
        }
        Ok(out)
    }
}

pub fn grvq_quantize(vector: &[f64], codebook: &Codebook) -> Result<Quantized> {
    if vector.len() != codebook.code_dim {
        return shape_err(format!("vector of {} for code_dim {}", vector.len(), codebook.code_dim));
    }
    let sd = codebook.sub_dim();
    let mut indices = Vec::with_capacity(codebook.groups * codebook.levels);
    let mut quantized = vec![0.0; codebook.code_dim];
    for g in 0..codebook.groups {
        let mut residual = vector[g * sd..(g + 1) * sd].to_vec();
        for l in 0..codebook.levels {
            let e = codebook.nearest(g, l, &residual);
            indices.push(e as u32);
            let cw = codebook.codeword(g, l, e);
            for ((r, q), c) in residual.iter_mut().zip(&mut quantized[g * sd..(g + 1) * sd]).zip(cw) {
                *r -= c;
                *q += c;
            }
        }
    }
    let residual_norm = vector
        .iter()
        .zip(&quantized)
        .map(|(v, q)| (v - q) * (v - q))
        .sum::<f64>()
        .sqrt();
    Ok(Quantized { indices, quantized, residual_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::seeded_rng;

    fn random_codebook(groups: usize, levels: usize, entries: usize, code_dim: usize, seed: u64) -> Codebook {
        let mut rng = seeded_rng(seed);
        let mut cb = Codebook::new(CodebookPart::Wrist, groups, levels, entries, code_dim).unwrap();
        for g in 0..groups {
            for l in 0..levels {
                for e in 1..entries {
                    let scale = 0.5f64.powi(l as i32);
                    for v in cb.codeword_mut(g, l, e) {
                        *v = rng.normal() * scale;
                    }
                }
            }
        }
        cb
    }

    #[test]
    fn exact_codeword_has_zero_residual() {
        let cb = random_codebook(1, 1, 8, 4, 1);
        let v = cb.codeword(0, 0, 5).to_vec();
        let q = grvq_quantize(&v, &cb).unwrap();
        assert_eq!(q.indices, vec![5]);
        assert_eq!(q.residual_norm, 0.0);
    }

    #[test]
    fn zero_vector_selects_reserved_zero() {
        let cb = random_codebook(2, 3, 8, 4, 2);
        let q = grvq_quantize(&[0.0; 4], &cb).unwrap();
        assert!(q.indices.iter().all(|&i| i == 0));
        assert!(q.quantized.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let mut cb = Codebook::new(CodebookPart::Finger, 1, 1, 3, 1).unwrap();
        cb.codeword_mut(0, 0, 1)[0] = 1.0;
        cb.codeword_mut(0, 0, 2)[0] = 1.0;
        assert_eq!(grvq_quantize(&[0.9], &cb).unwrap().indices, vec![1]);
        // equidistant from 0 and 1
        assert_eq!(grvq_quantize(&[0.5], &cb).unwrap().indices, vec![0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let cb = random_codebook(1, 1, 4, 4, 3);
        assert!(grvq_quantize(&[0.0; 3], &cb).is_err());
        assert!(Codebook::new(CodebookPart::Wrist, 3, 1, 4, 4).is_err());
    }

    #[test]
    fn decode_matches_quantized() {
        let cb = random_codebook(2, 2, 8, 6, 4);
        let q = grvq_quantize(&[0.3, -0.1, 0.8, 0.2, -0.5, 0.4], &cb).unwrap();
        assert_eq!(cb.decode(&q.indices).unwrap(), q.quantized);
        assert!(cb.decode(&[0, 0, 0, 9]).is_err());
    }
}
