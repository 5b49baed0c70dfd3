use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandSide {
    Left,
    Right,
}

impl HandSide {
    pub fn as_u8(self) -> u8 {
        match self {
            HandSide::Left => 0,
            HandSide::Right => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(HandSide::Left),
            1 => Some(HandSide::Right),
            _ => None,
        }
    }
}

/// One hand pose: wrist translation (world units), wrist rotation
/// (axis-angle, radians) and relative finger joint angles (radians).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub wrist_translation: [f64; 3],
    pub wrist_rotation: [f64; 3],
    pub finger_joints: Vec<f64>,
}

pub const WRIST_FEATURES: usize = 6;

impl PoseFrame {
    pub fn zero(finger_dims: usize) -> Self {
        Self { wrist_translation: [0.0; 3], wrist_rotation: [0.0; 3], finger_joints: vec![0.0; finger_dims] }
    }

    pub fn is_finite(&self) -> bool {
        self.wrist_translation
            .iter()
            .chain(&self.wrist_rotation)
            .chain(&self.finger_joints)
            .all(|v| v.is_finite())
    }

    /// Translation then rotation.
    pub fn wrist_features(&self) -> [f64; WRIST_FEATURES] {
        let [a, b, c] = self.wrist_translation;
        let [d, e, f] = self.wrist_rotation;
        [a, b, c, d, e, f]
    }

    pub fn from_features(wrist: &[f64], fingers: &[f64]) -> Self {
        Self {
            wrist_translation: [wrist[0], wrist[1], wrist[2]],
            wrist_rotation: [wrist[3], wrist[4], wrist[5]],
            finger_joints: fingers.to_vec(),
        }
    }

    /// Rewrites the rotation so that its angle lies in `[0, π]`.
    pub fn canonicalize(&mut self) {
        self.wrist_rotation = canonical_axis_angle(self.wrist_rotation);
    }
}

pub fn canonical_axis_angle(r: [f64; 3]) -> [f64; 3] {
    let angle = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    if angle <= PI || !angle.is_finite() {
        return r;
    }
    let wrapped = angle.rem_euclid(2.0 * PI);
    // angle θ and θ − 2π about the same axis are the same rotation.
    let target = if wrapped > PI { wrapped - 2.0 * PI } else { wrapped };
    let s = target / angle;
    [r[0] * s, r[1] * s, r[2] * s]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionChunk {
    pub frames: Vec<PoseFrame>,
    pub hand_side: HandSide,
}

/// Non-overlapping consecutive chunks of `chunk_len` frames; a trailing
/// remainder is dropped.
pub fn chunk_sequence(poses: &[PoseFrame], chunk_len: usize, hand_side: HandSide) -> Result<Vec<MotionChunk>> {
    if chunk_len == 0 {
        return Err(Error::InvalidArgument("chunk length must be positive".into()));
    }
    if poses.len() < chunk_len {
        return Err(Error::Empty(format!(
            "{} frames cannot fill a chunk of {chunk_len}",
            poses.len()
        )));
    }
    Ok(poses
        .chunks_exact(chunk_len)
        .map(|c| MotionChunk { frames: c.to_vec(), hand_side })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize) -> Vec<PoseFrame> {
        (0..n)
            .map(|i| {
                let mut f = PoseFrame::zero(5);
                f.wrist_translation[0] = i as f64;
                f
            })
            .collect()
    }

    #[test]
    fn thirty_frames_make_two_chunks() {
        let c = chunk_sequence(&frames(30), 15, HandSide::Right).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].frames[0].wrist_translation[0], 15.0);
    }

    #[test]
    fn exact_chunk_is_identity() {
        let f = frames(15);
        let c = chunk_sequence(&f, 15, HandSide::Left).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].frames, f);
    }

    #[test]
    fn remainder_dropped() {
        let c = chunk_sequence(&frames(44), 15, HandSide::Right).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].frames.last().unwrap().wrist_translation[0], 29.0);
    }

    #[test]
    fn too_short_is_an_error() {
        assert!(matches!(chunk_sequence(&frames(14), 15, HandSide::Right), Err(Error::Empty(_))));
    }

    #[test]
    fn canonical_rotation_within_pi() {
        let r = canonical_axis_angle([0.0, 0.0, 1.5 * PI]);
        assert!((r[2] + 0.5 * PI).abs() < 1e-12);
        let r = canonical_axis_angle([0.3, 0.0, 0.0]);
        assert_eq!(r, [0.3, 0.0, 0.0]);
    }
}
