//! Synthetic manipulation world: scripted reach-and-grasp episodes of a toy
//! hand, rendered to fixed-dimension observation features.
//!
//! Every episode draws its trajectory parameters first and its nuisance
//! second, from the same per-episode seed, so a lab and a wild episode with
//! matching seeds share the underlying motion and differ only in playback
//! speed and observation nuisance.

use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::backend::{seeded_rng, Rng};
use crate::error::{Error, Result};
use crate::io;
use crate::motion::{HandSide, PoseFrame};

pub const RECORD_MAGIC: &[u8; 8] = b"JALA-EPS";
pub const RECORD_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub finger_dims: usize,
    pub chunk_len: usize,
    pub chunks_per_episode: usize,
    pub targets: usize,
    pub verbs: usize,
    pub embed_dims: usize,
    pub nuisance_dims: usize,
    /// Width of one visual feature token; observations split into
    /// `(embed_dims + nuisance_dims) / feature_token_dim` tokens.
    pub feature_token_dim: usize,
    pub nuisance_scale_lab: f64,
    pub nuisance_scale_wild: f64,
    pub frame_noise: f64,
    /// Minimum ratio of wild nuisance variance to state-embedding variance.
    pub nuisance_dominance: f64,
    pub wild_time_scale: f64,
    pub lab_train: usize,
    pub lab_eval: usize,
    pub wild_train: usize,
    pub wild_eval: usize,
    pub robot_train: usize,
    pub robot_eval: usize,
    pub wild_label_fraction: f64,
    pub action_horizon: usize,
    pub action_dims: usize,
    pub proprio_dims: usize,
    pub seed: u64,
    /// Distance between the first seeds of consecutive splits.
    pub seed_stride: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            finger_dims: 5,
            chunk_len: 15,
            chunks_per_episode: 2,
            targets: 3,
            verbs: 3,
            embed_dims: 24,
            nuisance_dims: 8,
            feature_token_dim: 16,
            nuisance_scale_lab: 0.1,
            nuisance_scale_wild: 1.0,
            frame_noise: 0.01,
            nuisance_dominance: 2.0,
            wild_time_scale: 0.5,
            lab_train: 600,
            lab_eval: 100,
            wild_train: 600,
            wild_eval: 100,
            robot_train: 48,
            robot_eval: 64,
            wild_label_fraction: 0.1,
            action_horizon: 5,
            action_dims: 4,
            proprio_dims: 4,
            seed: 7,
            seed_stride: 1_000_000,
        }
    }
}

impl WorldConfig {
    pub fn frames_per_episode(&self) -> usize {
        self.chunks_per_episode * self.chunk_len + 1
    }

    pub fn obs_dim(&self) -> usize {
        self.embed_dims + self.nuisance_dims
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.obs_dim() / self.feature_token_dim
    }

    pub fn instruction_vocab(&self) -> usize {
        self.verbs + self.targets
    }

    fn state_dims(&self) -> usize {
        6 + self.finger_dims + 3 * self.targets + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.wild_time_scale <= 0.0 || !self.wild_time_scale.is_finite() {
            return bad("world.wild_time_scale must be positive");
        }
        if [self.lab_train, self.lab_eval, self.wild_train, self.wild_eval, self.robot_train, self.robot_eval]
            .contains(&0)
        {
            return bad("world split sizes must be at least 1");
        }
        if self.feature_token_dim == 0 || self.obs_dim() % self.feature_token_dim != 0 {
            return bad("world observation width must be a multiple of feature_token_dim");
        }
        if !(0.0..=1.0).contains(&self.wild_label_fraction) {
            return bad("world.wild_label_fraction must lie in [0, 1]");
        }
        if self.chunk_len == 0 || self.chunks_per_episode == 0 || self.targets == 0 || self.verbs == 0 {
            return bad("world chunk, target and verb counts must be positive");
        }
        if self.finger_dims < 2 {
            return bad("world.finger_dims must be at least 2");
        }
        if self.action_horizon == 0 || self.chunk_len % self.action_horizon != 0 {
            return bad("world.action_horizon must divide chunk_len");
        }
        if self.proprio_dims != 4 || self.action_dims == 0 {
            return bad("world.proprio_dims must be 4 and action_dims positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Lab,
    Wild,
    Robot,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Lab => "lab",
            Split::Wild => "wild",
            Split::Robot => "robot",
        }
    }

    fn code(self) -> u8 {
        match self {
            Split::Lab => 0,
            Split::Wild => 1,
            Split::Robot => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Split::Lab),
            1 => Some(Split::Wild),
            2 => Some(Split::Robot),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSample {
    pub seed: u64,
    pub split: Split,
    /// Local instruction ids: `[verb, verbs + target]`.
    pub instruction: Vec<u32>,
    pub observations: Vec<Vec<f64>>,
    pub poses: Option<Vec<PoseFrame>>,
    pub labeled: bool,
    pub hand_side: HandSide,
    /// Proprioceptive state per frame.
    pub proprio: Vec<Vec<f64>>,
    /// Robot action chunk over the first motion chunk, `horizon × action_dims`.
    pub actions: Option<Vec<Vec<f64>>>,
}

impl EpisodeSample {
    pub fn frames(&self) -> usize {
        self.observations.len()
    }
}

/// Fixed random maps shared by every episode of one world.
#[derive(Clone, Debug)]
pub struct World {
    config: WorldConfig,
    embed_w: Vec<f64>,
    embed_b: Vec<f64>,
    action_b: Vec<f64>,
    action_c: Vec<f64>,
}

fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

struct Script {
    hand: HandSide,
    verb: usize,
    target: usize,
    targets: Vec<[f64; 3]>,
    home: [f64; 3],
    rot0: [f64; 3],
    rot_goal: [f64; 3],
    open: Vec<f64>,
    closed: Vec<f64>,
    reach: f64,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(config.seed).substream("world-maps");
        let sd = config.state_dims();
        let embed_w = rng.normal_vec(config.embed_dims * sd, 0.8 / (sd as f64).sqrt());
        let embed_b = rng.normal_vec(config.embed_dims, 0.2);
        let action_b = rng.normal_vec(config.action_dims * 4, 0.6);
        let action_c = rng.normal_vec(config.action_dims * config.proprio_dims, 0.3);
        Ok(Self { config, embed_w, embed_b, action_b, action_c })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    fn script(&self, rng: &mut Rng) -> Script {
        let c = &self.config;
        let hand = if rng.bernoulli(0.5) { HandSide::Right } else { HandSide::Left };
        let sgn = if hand == HandSide::Right { 1.0 } else { -1.0 };
        let verb = rng.below(c.verbs);
        let target = rng.below(c.targets);
        let targets = (0..c.targets)
            .map(|_| [sgn * rng.uniform_range(0.0, 0.45), rng.uniform_range(0.15, 0.45), rng.uniform_range(-0.1, 0.2)])
            .collect();
        let home = [sgn * 0.25 + 0.02 * rng.normal(), 0.02 * rng.normal(), 0.02 * rng.normal()];
        let rot0 = [0.05 * rng.normal(), 0.05 * rng.normal(), 0.05 * rng.normal()];
        let base = match verb % 3 {
            0 => [0.0, 0.0, 0.6 * sgn],
            1 => [0.6, 0.0, 0.0],
            _ => [0.0, 0.5 * sgn, 0.0],
        };
        let rot_goal = [base[0] + 0.05 * rng.normal(), base[1] + 0.05 * rng.normal(), base[2] + 0.05 * rng.normal()];
        let open: Vec<f64> = (0..c.finger_dims).map(|_| 0.1 + 0.02 * rng.normal()).collect();
        let closed = (0..c.finger_dims)
            .map(|j| {
                let level = match verb % 3 {
                    0 => 1.2,
                    1 => 0.25,
                    _ if j == 1 => 0.05,
                    _ => 1.2,
                };
                level + 0.03 * rng.normal()
            })
            .collect();
        let reach = rng.uniform_range(18.0, 22.0);
        Script { hand, verb, target, targets, home, rot0, rot_goal, open, closed, reach }
    }

    fn pose_at(&self, s: &Script, time: f64) -> PoseFrame {
        let reach = min_jerk(time / s.reach);
        let grasp = min_jerk((time - 0.6 * s.reach) / (0.5 * s.reach));
        let goal = s.targets[s.target];
        let mut wrist_translation = [0.0; 3];
        let mut wrist_rotation = [0.0; 3];
        for i in 0..3 {
            wrist_translation[i] = s.home[i] + (goal[i] - s.home[i]) * reach;
            wrist_rotation[i] = s.rot0[i] + (s.rot_goal[i] - s.rot0[i]) * reach;
        }
        let finger_joints = s.open.iter().zip(&s.closed).map(|(o, c)| o + (c - o) * grasp).collect();
        PoseFrame { wrist_translation, wrist_rotation, finger_joints }
    }

    fn embed(&self, s: &Script, pose: &PoseFrame) -> Vec<f64> {
        let c = &self.config;
        let sgn = if s.hand == HandSide::Right { 1.0 } else { -1.0 };
        let mut state = Vec::with_capacity(c.state_dims());
        state.extend(pose.wrist_translation.iter().map(|v| v / 0.25));
        state.extend(pose.wrist_rotation.iter().map(|v| v / 0.4));
        state.extend(pose.finger_joints.iter().map(|v| (v - 0.6) / 0.5));
        for t in &s.targets {
            state.extend(t.iter().map(|v| v / 0.25));
        }
        state.push(sgn);
        let sd = state.len();
        (0..c.embed_dims)
            .map(|o| {
                let row = &self.embed_w[o * sd..(o + 1) * sd];
                (row.iter().zip(&state).map(|(w, x)| w * x).sum::<f64>() + self.embed_b[o]).tanh()
            })
            .collect()
    }

    fn proprio(pose: &PoseFrame) -> Vec<f64> {
        let fm = pose.finger_joints.iter().sum::<f64>() / pose.finger_joints.len() as f64;
        let p = pose.wrist_translation;
        vec![p[0] / 0.25, p[1] / 0.25, p[2] / 0.25, fm]
    }

    fn actions(&self, poses: &[PoseFrame], q0: &[f64]) -> Vec<Vec<f64>> {
        let c = &self.config;
        let stride = c.chunk_len / c.action_horizon;
        let fm = |p: &PoseFrame| p.finger_joints.iter().sum::<f64>() / p.finger_joints.len() as f64;
        (0..c.action_horizon)
            .map(|h| {
                let (a, b) = (&poses[h * stride], &poses[(h + 1) * stride]);
                let delta = [
                    (b.wrist_translation[0] - a.wrist_translation[0]) / 0.06,
                    (b.wrist_translation[1] - a.wrist_translation[1]) / 0.06,
                    (b.wrist_translation[2] - a.wrist_translation[2]) / 0.06,
                    (fm(b) - fm(a)) / 0.2,
                ];
                (0..c.action_dims)
                    .map(|o| {
                        let bd: f64 = (0..4).map(|i| self.action_b[o * 4 + i] * delta[i]).sum();
                        let cq: f64 = (0..c.proprio_dims).map(|i| self.action_c[o * c.proprio_dims + i] * q0[i]).sum();
                        (bd + cq).tanh()
                    })
                    .collect()
            })
            .collect()
    }

    /// Deterministic episode for `seed`; `labeled` controls whether poses are kept.
    pub fn episode(&self, seed: u64, split: Split, labeled: bool) -> EpisodeSample {
        let c = &self.config;
        let root = seeded_rng(seed);
        let mut traj = root.substream("trajectory");
        let script = self.script(&mut traj);
        let scale = if split == Split::Wild { c.wild_time_scale } else { 1.0 };
        let poses: Vec<PoseFrame> = (0..c.frames_per_episode()).map(|f| self.pose_at(&script, f as f64 * scale)).collect();

        let mut nuis = root.substream("nuisance");
        let sigma = if split == Split::Wild { c.nuisance_scale_wild } else { c.nuisance_scale_lab };
        let episode_nuisance = nuis.normal_vec(c.nuisance_dims, sigma);
        let mut noise = root.substream("frame-noise");
        let observations = poses
            .iter()
            .map(|p| {
                let mut v = self.embed(&script, p);
                v.extend(episode_nuisance.iter().copied());
                for x in v.iter_mut() {
                    *x += c.frame_noise * noise.normal();
                }
                v
            })
            .collect();
        let proprio: Vec<Vec<f64>> = poses
            .iter()
            .map(|p| Self::proprio(p).into_iter().map(|x| x + 0.01 * noise.normal()).collect())
            .collect();
        let actions = (split == Split::Robot).then(|| self.actions(&poses, &proprio[0]));
        let instruction = vec![script.verb as u32, (c.verbs + script.target) as u32];
        EpisodeSample {
            seed,
            split,
            instruction,
            observations,
            poses: labeled.then_some(poses),
            labeled,
            hand_side: script.hand,
            proprio,
            actions,
        }
    }
}

/// Single episode under the split's default labeling (wild episodes unlabeled).
pub fn generate_episode(config: &WorldConfig, seed: u64, split: Split) -> Result<EpisodeSample> {
    let world = World::new(config.clone())?;
    Ok(world.episode(seed, split, split != Split::Wild))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRange {
    pub name: String,
    pub start: u64,
    pub count: u64,
}

impl SeedRange {
    fn end(&self) -> u64 {
        self.start.saturating_add(self.count)
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub lab_train: Vec<EpisodeSample>,
    pub lab_eval: Vec<EpisodeSample>,
    pub wild_train: Vec<EpisodeSample>,
    pub wild_eval: Vec<EpisodeSample>,
    pub robot_train: Vec<EpisodeSample>,
    pub robot_eval: Vec<EpisodeSample>,
    pub ranges: Vec<SeedRange>,
}

impl Splits {
    pub fn named(&self, name: &str) -> Option<&[EpisodeSample]> {
        Some(match name {
            "lab_train" => &self.lab_train,
            "lab_eval" => &self.lab_eval,
            "wild_train" => &self.wild_train,
            "wild_eval" => &self.wild_eval,
            "robot_train" => &self.robot_train,
            "robot_eval" => &self.robot_eval,
            _ => return None,
        })
    }

    pub const NAMES: [&'static str; 6] = ["lab_train", "lab_eval", "wild_train", "wild_eval", "robot_train", "robot_eval"];
}

/// Seed ranges for every split; any overlap is rejected.
pub fn seed_ranges(config: &WorldConfig) -> Result<Vec<SeedRange>> {
    let sizes = [config.lab_train, config.lab_eval, config.wild_train, config.wild_eval, config.robot_train, config.robot_eval];
    let stride = config.seed_stride.max(1);
    let base = config.seed.wrapping_mul(8).wrapping_mul(stride);
    let ranges: Vec<SeedRange> = Splits::NAMES
        .iter()
        .zip(sizes)
        .enumerate()
        .map(|(k, (name, n))| SeedRange { name: name.to_string(), start: base.wrapping_add(k as u64 * stride), count: n as u64 })
        .collect();
    check_disjoint(&ranges)?;
    Ok(ranges)
}

pub fn check_disjoint(ranges: &[SeedRange]) -> Result<()> {
    for (i, a) in ranges.iter().enumerate() {
        for b in &ranges[i + 1..] {
            if a.start < b.end() && b.start < a.end() {
                return Err(Error::Config(format!("seed ranges of {} and {} overlap", a.name, b.name)));
            }
        }
    }
    Ok(())
}

/// Whether wild episode `i` of `n` carries a pseudo-label; exactly
/// `floor(n · fraction)` episodes are flagged, spread evenly.
pub fn wild_label_flag(i: usize, fraction: f64) -> bool {
    let before = (i as f64 * fraction).floor();
    let after = ((i + 1) as f64 * fraction).floor();
    after > before
}

pub fn make_splits(config: &WorldConfig) -> Result<Splits> {
    let world = World::new(config.clone())?;
    let ranges = seed_ranges(config)?;
    let gen = |r: &SeedRange, split: Split, label: &dyn Fn(usize) -> bool| -> Vec<EpisodeSample> {
        (0..r.count as usize).map(|i| world.episode(r.start + i as u64, split, label(i))).collect()
    };
    let always = |_: usize| true;
    let wild_frac = |i: usize| wild_label_flag(i, config.wild_label_fraction);
    Ok(Splits {
        lab_train: gen(&ranges[0], Split::Lab, &always),
        lab_eval: gen(&ranges[1], Split::Lab, &always),
        wild_train: gen(&ranges[2], Split::Wild, &wild_frac),
        // held-out wild episodes keep their poses so motion metrics can be computed
        wild_eval: gen(&ranges[3], Split::Wild, &always),
        robot_train: gen(&ranges[4], Split::Robot, &always),
        robot_eval: gen(&ranges[5], Split::Robot, &always),
        ranges,
    })
}

/// Observation features at the first frame of chunk `chunk_index` (1-based)
/// and `chunk_len` frames later, clamped to the final frame.
pub fn boundary_frames(episode: &EpisodeSample, chunk_index: usize, chunk_len: usize) -> Result<(&[f64], &[f64])> {
    let frames = episode.frames();
    let chunks = if chunk_len == 0 { 0 } else { frames / chunk_len };
    if chunk_index == 0 || chunk_index > chunks.max(1) || frames == 0 {
        return Err(Error::InvalidArgument(format!("chunk index {chunk_index} outside 1..={}", chunks.max(1))));
    }
    let start = (chunk_index - 1) * chunk_len;
    if start >= frames {
        return Err(Error::InvalidArgument(format!("chunk index {chunk_index} starts past the episode end")));
    }
    let end = (start + chunk_len).min(frames - 1);
    Ok((&episode.observations[start], &episode.observations[end]))
}

/// Splits a flat observation vector into feature tokens.
pub fn feature_tokens(obs: &[f64], token_dim: usize) -> Vec<Vec<f64>> {
    obs.chunks(token_dim).map(|c| c.to_vec()).collect()
}

pub fn write_episodes<W: Write>(w: &mut W, episodes: &[EpisodeSample]) -> Result<()> {
    w.write_all(RECORD_MAGIC)?;
    w.write_u32::<LE>(RECORD_VERSION)?;
    w.write_u64::<LE>(episodes.len() as u64)?;
    for e in episodes {
        w.write_u64::<LE>(e.seed)?;
        w.write_u8(e.split.code())?;
        w.write_u8(e.hand_side.as_u8())?;
        w.write_u8(e.labeled as u8)?;
        w.write_u32::<LE>(e.instruction.len() as u32)?;
        for &id in &e.instruction {
            w.write_u32::<LE>(id)?;
        }
        write_rows(w, &e.observations)?;
        write_rows(w, &e.proprio)?;
        match &e.poses {
            Some(p) => {
                w.write_u8(1)?;
                let rows: Vec<Vec<f64>> = p
                    .iter()
                    .map(|f| f.wrist_features().into_iter().chain(f.finger_joints.iter().copied()).collect())
                    .collect();
                write_rows(w, &rows)?;
            }
            None => w.write_u8(0)?,
        }
        match &e.actions {
            Some(a) => {
                w.write_u8(1)?;
                write_rows(w, a)?;
            }
            None => w.write_u8(0)?,
        }
    }
    Ok(())
}

pub fn read_episodes<R: Read>(r: &mut R) -> Result<Vec<EpisodeSample>> {
    io::expect_magic(r, RECORD_MAGIC)?;
    let version = r.read_u32::<LE>()?;
    if version != RECORD_VERSION {
        return Err(Error::Checkpoint(format!("episode record version {version}, expected {RECORD_VERSION}")));
    }
    let n = r.read_u64::<LE>()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let seed = r.read_u64::<LE>()?;
        let split = Split::from_code(r.read_u8()?).ok_or_else(|| Error::Checkpoint("bad split code".into()))?;
        let hand_side = HandSide::from_u8(r.read_u8()?).ok_or_else(|| Error::Checkpoint("bad hand code".into()))?;
        let labeled = r.read_u8()? != 0;
        let ni = r.read_u32::<LE>()? as usize;
        let instruction = (0..ni).map(|_| r.read_u32::<LE>()).collect::<std::io::Result<Vec<_>>>()?;
        let observations = read_rows(r)?;
        let proprio = read_rows(r)?;
        let poses = if r.read_u8()? == 1 {
            Some(read_rows(r)?.into_iter().map(|row| PoseFrame::from_features(&row[..6], &row[6..])).collect())
        } else {
            None
        };
        let actions = if r.read_u8()? == 1 { Some(read_rows(r)?) } else { None };
        out.push(EpisodeSample { seed, split, instruction, observations, poses, labeled, hand_side, proprio, actions });
    }
    Ok(out)
}

fn write_rows<W: Write>(w: &mut W, rows: &[Vec<f64>]) -> Result<()> {
    w.write_u32::<LE>(rows.len() as u32)?;
    w.write_u32::<LE>(rows.first().map_or(0, |r| r.len()) as u32)?;
    for row in rows {
        for &v in row {
            w.write_f64::<LE>(v)?;
        }
    }
    Ok(())
}

fn read_rows<R: Read>(r: &mut R) -> Result<Vec<Vec<f64>>> {
    let n = r.read_u32::<LE>()? as usize;
    let d = r.read_u32::<LE>()? as usize;
    (0..n)
        .map(|_| (0..d).map(|_| r.read_f64::<LE>().map_err(Error::from)).collect())
        .collect()
}
