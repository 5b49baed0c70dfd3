//! Motion tokenizer: per-part temporal encoders map a chunk of frames onto a
//! fixed number of latent slots, every slot is GRVQ-quantized, and a mirrored
//! decoder maps quantized slots back to frames.
//!
//! Wrist (translation + rotation) and finger streams are encoded
//! independently and are hand-agnostic; each slot contributes
//! `groups × levels` token ids.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grvq::{grvq_quantize, Codebook, CodebookPart};
use super::pose::{HandSide, MotionChunk, PoseFrame, WRIST_FEATURES};
use super::stream::TokenChunk;
use crate::backend::nn::linear;
use crate::backend::{Bound, Graph, ParamStore, Rng, Tensor, Var};
use crate::backend::seeded_rng;
use crate::error::{shape_err, Error, Result};
use crate::io;
use crate::training::optim::AdamW;

pub const MAGIC: &[u8; 8] = b"JALA-TOK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub chunk_len: usize,
    pub finger_dims: usize,
    pub slots_wrist: usize,
    pub slots_finger: usize,
    pub groups: usize,
    pub levels: usize,
    pub entries: usize,
    pub code_dim: usize,
    pub channels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub commitment_weight: f64,
    pub ema_decay: f64,
    pub dead_code_epochs: usize,
    pub val_fraction: f64,
    /// Reconstruction MPJPE (world units) a trained tokenizer must stay under
    /// on held-out chunks.
    pub rho_tok: f64,
    pub min_chunks: usize,
    pub seed: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            chunk_len: 15,
            finger_dims: 5,
            slots_wrist: 4,
            slots_finger: 4,
            groups: 1,
            levels: 2,
            entries: 64,
            code_dim: 8,
            channels: 24,
            epochs: 20,
            batch_size: 32,
            lr: 3e-3,
            commitment_weight: 0.25,
            ema_decay: 0.99,
            dead_code_epochs: 2,
            val_fraction: 0.1,
            rho_tok: 0.06,
            min_chunks: 1000,
            seed: 11,
        }
    }
}

impl TokenizerConfig {
    pub fn tokens_per_slot(&self) -> usize {
        self.groups * self.levels
    }

    pub fn wrist_tokens(&self) -> usize {
        self.slots_wrist * self.tokens_per_slot()
    }

    pub fn finger_tokens(&self) -> usize {
        self.slots_finger * self.tokens_per_slot()
    }

    pub fn tokens_per_chunk(&self) -> usize {
        self.wrist_tokens() + self.finger_tokens()
    }

    fn part_dims(&self, part: CodebookPart) -> (usize, usize) {
        match part {
            CodebookPart::Wrist => (WRIST_FEATURES, self.slots_wrist),
            CodebookPart::Finger => (self.finger_dims, self.slots_finger),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct PartCodec {
    part: CodebookPart,
    params: ParamStore,
    codebook: Codebook,
}

fn part_name(part: CodebookPart) -> &'static str {
    match part {
        CodebookPart::Wrist => "wrist",
        CodebookPart::Finger => "finger",
    }
}

impl PartCodec {
    fn init(config: &TokenizerConfig, part: CodebookPart, rng: &mut Rng) -> Result<Self> {
        let (in_dim, slots) = config.part_dims(part);
        let (t, c) = (config.chunk_len, config.channels);
        let mut p = ParamStore::new();
        p.linear("enc0.conv", 3 * in_dim, c, 1.0, rng);
        p.linear("enc0.mix", c, c, 1.0, rng);
        p.linear("enc1.conv", 3 * c, c, 1.0, rng);
        p.linear("enc1.mix", c, c, 1.0, rng);
        p.normal("pool", slots, t, 1.0 / t as f64, rng);
        p.linear("to_code", c, config.code_dim, 1.0, rng);
        p.linear("from_code", config.code_dim, c, 1.0, rng);
        p.normal("unpool", t, slots, 1.0 / (slots as f64).sqrt(), rng);
        p.linear("dec0.conv", 3 * c, c, 1.0, rng);
        p.linear("dec0.mix", c, c, 1.0, rng);
        p.linear("dec1.conv", 3 * c, c, 1.0, rng);
        p.linear("dec1.mix", c, c, 1.0, rng);
        p.linear("out", c, in_dim, 0.5, rng);
        let codebook = Codebook::new(part, config.groups, config.levels, config.entries, config.code_dim)?;
        Ok(Self { part, params: p, codebook })
    }
}

/// Same-padded kernel-3 temporal convolution followed by pointwise mixing.
fn conv_block(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Var {
    let [t, cin] = g.value(x).shape();
    let zero = g.constant(Tensor::zeros(1, cin));
    let padded = g.concat_rows(&[zero, x, zero]);
    let taps: Vec<Var> = (0..3)
        .map(|o| {
            let idx: Vec<usize> = (o..o + t).collect();
            g.gather_rows(padded, &idx)
        })
        .collect();
    let cat = g.concat_cols(&taps);
    let h = linear(g, p, &format!("{name}.conv"), cat);
    let h = g.gelu(h);
    let h = linear(g, p, &format!("{name}.mix"), h);
    g.gelu(h)
}

fn encode_graph(g: &mut Graph, p: &Bound, x: Var) -> Var {
    let h = conv_block(g, p, "enc0", x);
    let h2 = conv_block(g, p, "enc1", h);
    let h = g.add(h, h2);
    let pooled = g.matmul(p.get("pool"), h);
    linear(g, p, "to_code", pooled)
}

fn decode_graph(g: &mut Graph, p: &Bound, zq: Var) -> Var {
    let u = linear(g, p, "from_code", zq);
    let h = g.matmul(p.get("unpool"), u);
    let h2 = conv_block(g, p, "dec0", h);
    let h = g.add(h, h2);
    let h2 = conv_block(g, p, "dec1", h);
    let h = g.add(h, h2);
    linear(g, p, "out", h)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    config: TokenizerConfig,
    trained: bool,
    mean: Vec<f64>,
    std: Vec<f64>,
    wrist: PartCodec,
    finger: PartCodec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Held-out reconstruction MSE in normalized feature units.
    pub val_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizerReport {
    pub epochs: Vec<EpochLog>,
    /// `[part][group·levels + level][entry]` assignment counts over the final epoch.
    pub assignments: Vec<Vec<Vec<u64>>>,
    /// Fraction of entries used at least once, per part and level.
    pub utilization: Vec<Vec<f64>>,
    pub total_assignments: u64,
    pub warnings: Vec<String>,
}

struct PartBatchStats {
    /// `[group][level][entry]` sums and counts of the residual targets.
    sums: Vec<f64>,
    counts: Vec<f64>,
    used: Vec<u64>,
    samples: Vec<Vec<Vec<f64>>>,
}

impl PartBatchStats {
    fn new(cb: &Codebook) -> Self {
        let n = cb.groups() * cb.levels() * cb.entries();
        Self {
            sums: vec![0.0; n * cb.sub_dim()],
            counts: vec![0.0; n],
            used: vec![0; n],
            samples: vec![Vec::new(); cb.groups() * cb.levels()],
        }
    }
}

/// Residual targets visited by the greedy search, per `(group, level)`.
fn residual_targets(cb: &Codebook, v: &[f64], indices: &[u32]) -> Vec<Vec<f64>> {
    let sd = cb.sub_dim();
    let mut out = Vec::with_capacity(cb.groups() * cb.levels());
    for g in 0..cb.groups() {
        let mut r = v[g * sd..(g + 1) * sd].to_vec();
        for l in 0..cb.levels() {
            out.push(r.clone());
            let e = indices[g * cb.levels() + l] as usize;
            for (x, c) in r.iter_mut().zip(cb.codeword(g, l, e)) {
                *x -= c;
            }
        }
    }
    out
}

impl Tokenizer {
    /// Untrained tokenizer with randomly initialised encoders.
    pub fn new(config: TokenizerConfig) -> Result<Self> {
        if config.chunk_len == 0 || config.slots_wrist == 0 || config.slots_finger == 0 {
            return Err(Error::Config("tokenizer chunk length and slot counts must be positive".into()));
        }
        let mut rng = seeded_rng(config.seed).substream("tokenizer-init");
        let wrist = PartCodec::init(&config, CodebookPart::Wrist, &mut rng)?;
        let finger = PartCodec::init(&config, CodebookPart::Finger, &mut rng)?;
        let dims = WRIST_FEATURES + config.finger_dims;
        Ok(Self { config, trained: false, mean: vec![0.0; dims], std: vec![1.0; dims], wrist, finger })
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn codebook(&self, part: CodebookPart) -> &Codebook {
        &self.codec(part).codebook
    }

    fn codec(&self, part: CodebookPart) -> &PartCodec {
        match part {
            CodebookPart::Wrist => &self.wrist,
            CodebookPart::Finger => &self.finger,
        }
    }

    fn check_chunk(&self, chunk: &MotionChunk) -> Result<()> {
        if chunk.frames.len() != self.config.chunk_len {
            return shape_err(format!("chunk of {} frames, tokenizer expects {}", chunk.frames.len(), self.config.chunk_len));
        }
        if let Some(f) = chunk.frames.iter().find(|f| f.finger_joints.len() != self.config.finger_dims) {
            return shape_err(format!("{} finger joints, expected {}", f.finger_joints.len(), self.config.finger_dims));
        }
        Ok(())
    }

    /// Normalized `(wrist, finger)` feature matrices, `T × dims` each.
    fn features(&self, chunk: &MotionChunk) -> (Tensor, Tensor) {
        let t = chunk.frames.len();
        let df = self.config.finger_dims;
        let mut w = Vec::with_capacity(t * WRIST_FEATURES);
        let mut f = Vec::with_capacity(t * df);
        for frame in &chunk.frames {
            for (i, v) in frame.wrist_features().iter().enumerate() {
                w.push((v - self.mean[i]) / self.std[i]);
            }
            for (j, v) in frame.finger_joints.iter().enumerate() {
                let i = WRIST_FEATURES + j;
                f.push((v - self.mean[i]) / self.std[i]);
            }
        }
        (Tensor::from_rows(t, WRIST_FEATURES, w), Tensor::from_rows(t, df, f))
    }

    fn encode_part(&self, part: CodebookPart, x: &Tensor) -> Tensor {
        let codec = self.codec(part);
        let mut g = Graph::new();
        let p = codec.params.bind(&mut g, |_| false);
        let xv = g.constant(x.clone());
        let z = encode_graph(&mut g, &p, xv);
        g.value(z).clone()
    }

    fn decode_part(&self, part: CodebookPart, zq: &Tensor) -> Tensor {
        let codec = self.codec(part);
        let mut g = Graph::new();
        let p = codec.params.bind(&mut g, |_| false);
        let zv = g.constant(zq.clone());
        let x = decode_graph(&mut g, &p, zv);
        g.value(x).clone()
    }

    fn quantize_slots(&self, part: CodebookPart, z: &Tensor) -> Result<Vec<u32>> {
        let cb = &self.codec(part).codebook;
        let mut ids = Vec::with_capacity(z.rows() * self.config.tokens_per_slot());
        for s in 0..z.rows() {
            ids.extend(grvq_quantize(z.row(s), cb)?.indices);
        }
        Ok(ids)
    }

    fn dequantize_slots(&self, part: CodebookPart, ids: &[u32]) -> Result<Tensor> {
        let cb = &self.codec(part).codebook;
        let per = self.config.tokens_per_slot();
        let (_, slots) = self.config.part_dims(part);
        if ids.len() != slots * per {
            return shape_err(format!("{} ids for {} slots of {per}", ids.len(), slots));
        }
        let mut rows = Vec::with_capacity(slots);
        for s in 0..slots {
            rows.push(cb.decode(&ids[s * per..(s + 1) * per])?);
        }
        Tensor::stack_rows(&rows)
    }

    pub fn tokenize_chunk(&self, chunk: &MotionChunk) -> Result<TokenChunk> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        self.check_chunk(chunk)?;
        let (w, f) = self.features(chunk);
        let zw = self.encode_part(CodebookPart::Wrist, &w);
        let zf = self.encode_part(CodebookPart::Finger, &f);
        Ok(TokenChunk {
            wrist_ids: self.quantize_slots(CodebookPart::Wrist, &zw)?,
            finger_ids: self.quantize_slots(CodebookPart::Finger, &zf)?,
            hand_side: chunk.hand_side,
        })
    }

    pub fn detokenize_chunk(&self, tokens: &TokenChunk) -> Result<MotionChunk> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        let zw = self.dequantize_slots(CodebookPart::Wrist, &tokens.wrist_ids)?;
        let zf = self.dequantize_slots(CodebookPart::Finger, &tokens.finger_ids)?;
        let w = self.decode_part(CodebookPart::Wrist, &zw);
        let f = self.decode_part(CodebookPart::Finger, &zf);
        let df = self.config.finger_dims;
        let frames = (0..self.config.chunk_len)
            .map(|t| {
                let wrist: Vec<f64> = w.row(t).iter().enumerate().map(|(i, v)| v * self.std[i] + self.mean[i]).collect();
                let fingers: Vec<f64> = f
                    .row(t)
                    .iter()
                    .enumerate()
                    .map(|(j, v)| v * self.std[WRIST_FEATURES + j] + self.mean[WRIST_FEATURES + j])
                    .collect();
                debug_assert_eq!(fingers.len(), df);
                PoseFrame::from_features(&wrist, &fingers)
            })
            .collect();
        Ok(MotionChunk { frames, hand_side: tokens.hand_side })
    }

    /// Reconstruction through quantization, in normalized feature units.
    fn reconstruction_mse(&self, chunk: &MotionChunk) -> Result<f64> {
        let (w, f) = self.features(chunk);
        let mut se = 0.0;
        let mut n = 0usize;
        for (part, x) in [(CodebookPart::Wrist, &w), (CodebookPart::Finger, &f)] {
            let z = self.encode_part(part, x);
            let ids = self.quantize_slots(part, &z)?;
            let zq = self.dequantize_slots(part, &ids)?;
            let xr = self.decode_part(part, &zq);
            se += x.data().iter().zip(xr.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            n += x.len();
        }
        Ok(se / n as f64)
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(FORMAT_VERSION)?;
        io::write_str(w, &serde_json::to_string(&self.config)?)?;
        io::write_f64s(w, &self.mean)?;
        io::write_f64s(w, &self.std)?;
        for codec in [&self.wrist, &self.finger] {
            let cb = &codec.codebook;
            w.write_u8(match codec.part {
                CodebookPart::Wrist => 0,
                CodebookPart::Finger => 1,
            })?;
            for v in [cb.groups(), cb.levels(), cb.entries(), cb.code_dim()] {
                w.write_u32::<LE>(v as u32)?;
            }
            io::write_f64s(w, cb.values())?;
            io::write_store(w, &codec.params)?;
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Self> {
        io::expect_magic(r, MAGIC)?;
        let version = r.read_u32::<LE>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("tokenizer format version {version}, expected {FORMAT_VERSION}")));
        }
        let config: TokenizerConfig = serde_json::from_str(&io::read_str(r)?)?;
        let mut tok = Tokenizer::new(config)?;
        tok.mean = io::read_f64s(r)?;
        tok.std = io::read_f64s(r)?;
        for expected in [CodebookPart::Wrist, CodebookPart::Finger] {
            let part = match r.read_u8()? {
                0 => CodebookPart::Wrist,
                1 => CodebookPart::Finger,
                other => return Err(Error::Checkpoint(format!("unknown codebook part {other}"))),
            };
            if part != expected {
                return Err(Error::Checkpoint("codebook parts out of order".into()));
            }
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.read_u32::<LE>()? as usize;
            }
            let values = io::read_f64s(r)?;
            let codebook = Codebook::from_values(part, dims[0], dims[1], dims[2], dims[3], values)?;
            let params = io::read_store(r)?;
            let codec = PartCodec { part, params, codebook };
            match part {
                CodebookPart::Wrist => tok.wrist = codec,
                CodebookPart::Finger => tok.finger = codec,
            }
        }
        tok.trained = true;
        Ok(tok)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.save(&mut buf)?;
        Ok(buf)
    }

    pub fn save_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::load(&mut bytes.as_slice())
    }

    /// Content digest of the serialized tokenizer.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}

pub fn train_tokenizer(chunks: &[MotionChunk], config: &TokenizerConfig) -> Result<(Tokenizer, TokenizerReport)> {
    if chunks.len() < config.min_chunks {
        return Err(Error::InvalidArgument(format!(
            "tokenizer training needs at least {} chunks, got {}",
            config.min_chunks,
            chunks.len()
        )));
    }
    let mut tok = Tokenizer::new(config.clone())?;
    for c in chunks {
        tok.check_chunk(c)?;
    }
    let root = seeded_rng(config.seed);
    let mut shuffle_rng = root.substream("tokenizer-shuffle");
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    shuffle_rng.shuffle(&mut order);
    let n_val = ((chunks.len() as f64 * config.val_fraction).round() as usize).clamp(1, chunks.len() - 1);
    let (train_idx, val_idx) = order.split_at(chunks.len() - n_val);
    let train_idx = train_idx.to_vec();

    // Feature normalization from training frames.
    let dims = WRIST_FEATURES + config.finger_dims;
    let mut sum = vec![0.0; dims];
    let mut sq = vec![0.0; dims];
    let mut count = 0.0;
    for &i in &train_idx {
        for f in &chunks[i].frames {
            let feats = f.wrist_features().into_iter().chain(f.finger_joints.iter().copied());
            for (k, v) in feats.enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
            count += 1.0;
        }
    }
    tok.mean = sum.iter().map(|s| s / count).collect();
    tok.std = sq
        .iter()
        .zip(&tok.mean)
        .map(|(s, m)| (s / count - m * m).max(0.0).sqrt().max(1e-3))
        .collect();

    let feats: Vec<(Tensor, Tensor)> = chunks.iter().map(|c| tok.features(c)).collect();
    let parts = [CodebookPart::Wrist, CodebookPart::Finger];
    let mut init_rng = root.substream("tokenizer-codebook");
    for part in parts {
        init_codebook(&mut tok, part, &feats, &train_idx, &mut init_rng);
    }

    let mut ema_counts: Vec<Vec<f64>> = parts
        .iter()
        .map(|&p| {
            let cb = tok.codebook(p);
            vec![1.0; cb.groups() * cb.levels() * cb.entries()]
        })
        .collect();
    let mut ema_sums: Vec<Vec<f64>> = parts.iter().map(|&p| tok.codebook(p).values().to_vec()).collect();
    let mut idle_epochs: Vec<Vec<usize>> = ema_counts.iter().map(|c| vec![0; c.len()]).collect();

    let mut opt = AdamW::new(0.9, 0.99, 0.0);
    let mut reinit_rng = root.substream("tokenizer-reinit");
    let mut report = TokenizerReport {
        epochs: Vec::new(),
        assignments: Vec::new(),
        utilization: Vec::new(),
        total_assignments: 0,
        warnings: Vec::new(),
    };
    let mut last_used: Vec<Vec<u64>> = Vec::new();
    let beta = config.ema_decay;
    for epoch in 0..config.epochs {
        let mut epoch_order = train_idx.clone();
        shuffle_rng.shuffle(&mut epoch_order);
        let mut epoch_used: Vec<Vec<u64>> = ema_counts.iter().map(|c| vec![0; c.len()]).collect();
        let mut last_samples: Vec<Vec<Vec<Vec<f64>>>> = vec![Vec::new(); 2];
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in epoch_order.chunks(config.batch_size) {
            let mut g = Graph::new();
            let bw = tok.wrist.params.bind(&mut g, |_| true);
            let bf = tok.finger.params.bind(&mut g, |_| true);
            let mut stats: Vec<PartBatchStats> = parts.iter().map(|&p| PartBatchStats::new(tok.codebook(p))).collect();
            let mut terms = Vec::with_capacity(batch.len() * 2);
            for &i in batch {
                for (pi, part) in parts.iter().enumerate() {
                    let bound = if pi == 0 { &bw } else { &bf };
                    let x = if pi == 0 { &feats[i].0 } else { &feats[i].1 };
                    let cb = tok.codebook(*part);
                    let xv = g.constant(x.clone());
                    let z = encode_graph(&mut g, bound, xv);
                    let zval = g.value(z).clone();
                    let mut q = Vec::with_capacity(zval.len());
                    for s in 0..zval.rows() {
                        let row = zval.row(s);
                        let qz = grvq_quantize(row, cb)?;
                        let st = &mut stats[pi];
                        for (gl, target) in residual_targets(cb, row, &qz.indices).into_iter().enumerate() {
                            let e = qz.indices[gl] as usize;
                            let slot = gl * cb.entries() + e;
                            st.counts[slot] += 1.0;
                            st.used[slot] += 1;
                            let sd = cb.sub_dim();
                            for (acc, v) in st.sums[slot * sd..(slot + 1) * sd].iter_mut().zip(&target) {
                                *acc += v;
                            }
                            st.samples[gl].push(target);
                        }
                        q.extend(qz.quantized);
                    }
                    let q = Tensor::from_rows(zval.rows(), zval.cols(), q);
                    // straight-through: forward uses q, backward sees identity
                    let offset = Tensor::from_rows(
                        q.rows(),
                        q.cols(),
                        q.data().iter().zip(zval.data()).map(|(a, b)| a - b).collect(),
                    );
                    let z_st = g.add_const(z, &offset);
                    let xr = decode_graph(&mut g, bound, z_st);
                    let recon = g.mse(xr, xv);
                    let qc = g.constant(q);
                    let commit = g.mse(z, qc);
                    let commit = g.scale(commit, config.commitment_weight);
                    terms.push(g.add(recon, commit));
                }
            }
            let stacked = g.concat_rows(&terms);
            let loss = g.mean(stacked);
            loss_sum += g.value(loss).item();
            batches += 1;
            let grads = g.backward(loss);
            let gw = bw.collect_grads(&g, &grads);
            let gf = bf.collect_grads(&g, &grads);
            opt.begin_step();
            opt.update("wrist", &mut tok.wrist.params, &gw, config.lr);
            opt.update("finger", &mut tok.finger.params, &gf, config.lr);

            for (pi, part) in parts.iter().enumerate() {
                let st = &stats[pi];
                let codec = match part {
                    CodebookPart::Wrist => &mut tok.wrist,
                    CodebookPart::Finger => &mut tok.finger,
                };
                let cb = &mut codec.codebook;
                let (ne, sd) = (cb.entries(), cb.sub_dim());
                for gl in 0..cb.groups() * cb.levels() {
                    let (gi, li) = (gl / cb.levels(), gl % cb.levels());
                    for e in 1..ne {
                        let slot = gl * ne + e;
                        ema_counts[pi][slot] = beta * ema_counts[pi][slot] + (1.0 - beta) * st.counts[slot];
                        let sums = &mut ema_sums[pi][slot * sd..(slot + 1) * sd];
                        for (acc, v) in sums.iter_mut().zip(&st.sums[slot * sd..(slot + 1) * sd]) {
                            *acc = beta * *acc + (1.0 - beta) * v;
                        }
                        let n = ema_counts[pi][slot].max(1e-6);
                        for (c, s) in cb.codeword_mut(gi, li, e).iter_mut().zip(sums.iter()) {
                            *c = s / n;
                        }
                    }
                }
                for (u, s) in epoch_used[pi].iter_mut().zip(&st.used) {
                    *u += s;
                }
                last_samples[pi] = st.samples.clone();
            }
        }

        // Reinitialize codes that have been idle for too long.
        for (pi, part) in parts.iter().enumerate() {
            let codec = match part {
                CodebookPart::Wrist => &mut tok.wrist,
                CodebookPart::Finger => &mut tok.finger,
            };
            let cb = &mut codec.codebook;
            let (ne, sd) = (cb.entries(), cb.sub_dim());
            for gl in 0..cb.groups() * cb.levels() {
                let (gi, li) = (gl / cb.levels(), gl % cb.levels());
                for e in 1..ne {
                    let slot = gl * ne + e;
                    if epoch_used[pi][slot] > 0 {
                        idle_epochs[pi][slot] = 0;
                        continue;
                    }
                    idle_epochs[pi][slot] += 1;
                    let pool = &last_samples[pi][gl];
                    if idle_epochs[pi][slot] >= config.dead_code_epochs && !pool.is_empty() {
                        let pick = &pool[reinit_rng.below(pool.len())];
                        let cw = cb.codeword_mut(gi, li, e);
                        for (c, v) in cw.iter_mut().zip(pick) {
                            *c = v + 1e-3 * reinit_rng.normal();
                        }
                        ema_counts[pi][slot] = 1.0;
                        ema_sums[pi][slot * sd..(slot + 1) * sd].copy_from_slice(cw);
                        idle_epochs[pi][slot] = 0;
                    }
                }
            }
        }

        tok.trained = true;
        let mut val = 0.0;
        for &i in val_idx {
            val += tok.reconstruction_mse(&chunks[i])?;
        }
        let val_mse = val / val_idx.len() as f64;
        log::debug!("tokenizer epoch {epoch}: train {:.5} val {:.5}", loss_sum / batches as f64, val_mse);
        report.epochs.push(EpochLog { epoch, train_loss: loss_sum / batches.max(1) as f64, val_mse });
        last_used = epoch_used;
    }
    tok.trained = true;

    for (pi, part) in parts.iter().enumerate() {
        let cb = tok.codebook(*part);
        let ne = cb.entries();
        let mut per_level = Vec::new();
        let mut util = Vec::new();
        for gl in 0..cb.groups() * cb.levels() {
            let counts = last_used.get(pi).map(|u| u[gl * ne..(gl + 1) * ne].to_vec()).unwrap_or_else(|| vec![0; ne]);
            let used = counts.iter().filter(|&&c| c > 0).count() as f64 / ne as f64;
            if used < 0.01 {
                let msg = format!("{} codebook level {gl} is dead ({:.1}% utilization)", part_name(*part), used * 100.0);
                log::warn!("{msg}");
                report.warnings.push(msg);
            }
            report.total_assignments += counts.iter().sum::<u64>();
            util.push(used);
            per_level.push(counts);
        }
        report.assignments.push(per_level);
        report.utilization.push(util);
        if !cb.is_finite() {
            return Err(Error::InvalidArgument(format!("{} codebook diverged", part_name(*part))));
        }
    }
    Ok((tok, report))
}

/// Seeds codebook levels with residuals of encoded training slots.
fn init_codebook(tok: &mut Tokenizer, part: CodebookPart, feats: &[(Tensor, Tensor)], train_idx: &[usize], rng: &mut Rng) {
    let take = train_idx.len().min(256);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for &i in &train_idx[..take] {
        let x = match part {
            CodebookPart::Wrist => &feats[i].0,
            CodebookPart::Finger => &feats[i].1,
        };
        let z = tok.encode_part(part, x);
        for s in 0..z.rows() {
            rows.push(z.row(s).to_vec());
        }
    }
    let codec = match part {
        CodebookPart::Wrist => &mut tok.wrist,
        CodebookPart::Finger => &mut tok.finger,
    };
    let cb = &mut codec.codebook;
    let sd = cb.sub_dim();
    for gi in 0..cb.groups() {
        let mut residuals: Vec<Vec<f64>> = rows.iter().map(|r| r[gi * sd..(gi + 1) * sd].to_vec()).collect();
        for li in 0..cb.levels() {
            for e in 1..cb.entries() {
                let pick = &residuals[rng.below(residuals.len())];
                let cw: Vec<f64> = pick.iter().map(|v| v + 1e-3 * rng.normal()).collect();
                cb.codeword_mut(gi, li, e).copy_from_slice(&cw);
            }
            for r in residuals.iter_mut() {
                let e = cb.nearest(gi, li, r);
                for (x, c) in r.iter_mut().zip(cb.codeword(gi, li, e)) {
                    *x -= c;
                }
            }
        }
    }
}

/// Mirror-free helper used by tests: a chunk holding a constant pose.
pub fn constant_chunk(frame: &PoseFrame, len: usize, hand_side: HandSide) -> MotionChunk {
    MotionChunk { frames: vec![frame.clone(); len], hand_side }
}
