//! Toy forward kinematics and motion-generation error metrics.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::PoseFrame;

/// First link, second link.
pub const LINK_LENGTHS: [f64; 2] = [0.04, 0.03];
/// Finger bases sit on a row in front of the wrist, in the hand frame.
pub const BASE_Y: f64 = 0.08;
pub const BASE_SPACING: f64 = 0.02;

fn finger_base(j: usize, count: usize) -> Vector3<f64> {
    let x = (j as f64 - (count as f64 - 1.0) / 2.0) * BASE_SPACING;
    Vector3::new(x, BASE_Y, 0.0)
}

pub fn rotation_matrix(axis_angle: [f64; 3]) -> Matrix3<f64> {
    Rotation3::from_scaled_axis(Vector3::from(axis_angle)).into_inner()
}

/// Wrist point followed by one fingertip per finger joint. Each finger is a
/// planar two-link chain flexing about the hand-frame x axis, the second link
/// bending twice as far as the first.
pub fn joints_from_pose(frame: &PoseFrame) -> Vec<[f64; 3]> {
    let r = rotation_matrix(frame.wrist_rotation);
    let t = Vector3::from(frame.wrist_translation);
    let n = frame.finger_joints.len();
    let mut out = Vec::with_capacity(1 + n);
    out.push(frame.wrist_translation);
    for (j, &theta) in frame.finger_joints.iter().enumerate() {
        let l1 = Vector3::new(0.0, theta.cos(), -theta.sin()) * LINK_LENGTHS[0];
        let l2 = Vector3::new(0.0, (2.0 * theta).cos(), -(2.0 * theta).sin()) * LINK_LENGTHS[1];
        let p = t + r * (finger_base(j, n) + l1 + l2);
        out.push([p.x, p.y, p.z]);
    }
    out
}

fn check_pair(pred: &[PoseFrame], gt: &[PoseFrame]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("no frames to compare".into()));
    }
    Ok(())
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn joint_error(p: &[[f64; 3]], g: &[[f64; 3]]) -> f64 {
    p.iter().zip(g).map(|(a, b)| dist(a, b)).sum::<f64>() / p.len() as f64
}

pub fn mpjpe(pred: &[PoseFrame], gt: &[PoseFrame]) -> Result<f64> {
    check_pair(pred, gt)?;
    let total: f64 = pred.iter().zip(gt).map(|(p, g)| joint_error(&joints_from_pose(p), &joints_from_pose(g))).sum();
    Ok(total / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Rotation, translation and uniform scale.
    #[default]
    Similarity,
    /// Rotation and translation only.
    Rigid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PaMpjpe {
    pub value: f64,
    /// Frames whose joint set was collinear and fell back to rigid alignment.
    pub degenerate_frames: usize,
}

/// Least-squares alignment of `x` onto `y`; returns the aligned points and
/// whether the source set was degenerate.
pub fn procrustes_align(x: &[[f64; 3]], y: &[[f64; 3]], mode: Alignment) -> (Vec<[f64; 3]>, bool) {
    let n = x.len() as f64;
    let xs: Vec<Vector3<f64>> = x.iter().map(|p| Vector3::from(*p)).collect();
    let ys: Vec<Vector3<f64>> = y.iter().map(|p| Vector3::from(*p)).collect();
    let mx = xs.iter().sum::<Vector3<f64>>() / n;
    let my = ys.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_x = 0.0;
    for (a, b) in xs.iter().zip(&ys) {
        let (da, db) = (a - mx, b - my);
        cov += db * da.transpose();
        scatter += da * da.transpose();
        var_x += da.norm_squared();
    }
    cov /= n;
    var_x /= n;
    let spread = scatter.symmetric_eigenvalues();
    let mut ev: Vec<f64> = spread.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let degenerate = ev[0] <= 0.0 || ev[1] <= 1e-12 * ev[0];
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = if mode == Alignment::Similarity && !degenerate && var_x > 0.0 {
        let d = svd.singular_values;
        (d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)]) / var_x
    } else {
        1.0
    };
    let t = my - r * mx * scale;
    let aligned = xs
        .iter()
        .map(|p| {
            let q = r * p * scale + t;
            [q.x, q.y, q.z]
        })
        .collect();
    (aligned, degenerate)
}

pub fn pa_mpjpe_with(pred: &[PoseFrame], gt: &[PoseFrame], mode: Alignment) -> Result<PaMpjpe> {
    check_pair(pred, gt)?;
    let mut total = 0.0;
    let mut degenerate_frames = 0;
    for (p, g) in pred.iter().zip(gt) {
        let (jp, jg) = (joints_from_pose(p), joints_from_pose(g));
        if jp.len() < 3 {
            return Err(Error::InvalidArgument("alignment needs at least 3 joints".into()));
        }
        let (aligned, degenerate) = procrustes_align(&jp, &jg, mode);
        degenerate_frames += degenerate as usize;
        // identity is always feasible, so never report worse than it
        total += joint_error(&aligned, &jg).min(joint_error(&jp, &jg));
    }
    Ok(PaMpjpe { value: total / pred.len() as f64, degenerate_frames })
}

pub fn pa_mpjpe(pred: &[PoseFrame], gt: &[PoseFrame]) -> Result<f64> {
    Ok(pa_mpjpe_with(pred, gt, Alignment::Similarity)?.value)
}

pub fn mwte(pred: &[PoseFrame], gt: &[PoseFrame]) -> Result<f64> {
    check_pair(pred, gt)?;
    let total: f64 = pred.iter().zip(gt).map(|(p, g)| dist(&p.wrist_translation, &g.wrist_translation)).sum();
    Ok(total / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MdeMode {
    /// Distance between start-to-end wrist displacement vectors.
    #[default]
    Distance,
    /// Angle in radians between the displacement vectors.
    Angle,
}

/// Displacement error for one sequence.
pub fn mde_with(pred: &[PoseFrame], gt: &[PoseFrame], mode: MdeMode) -> Result<f64> {
    check_pair(pred, gt)?;
    if pred.len() < 2 {
        return Err(Error::InvalidArgument("displacement error needs at least 2 frames".into()));
    }
    let disp = |s: &[PoseFrame]| {
        let (a, b) = (s[0].wrist_translation, s[s.len() - 1].wrist_translation);
        Vector3::new(b[0] - a[0], b[1] - a[1], b[2] - a[2])
    };
    let (dp, dg) = (disp(pred), disp(gt));
    Ok(match mode {
        MdeMode::Distance => (dp - dg).norm(),
        MdeMode::Angle => {
            let denom = dp.norm() * dg.norm();
            if denom == 0.0 {
                if dp.norm() == dg.norm() {
                    0.0
                } else {
                    std::f64::consts::FRAC_PI_2
                }
            } else {
                (dp.dot(&dg) / denom).clamp(-1.0, 1.0).acos()
            }
        }
    })
}

pub fn mde(pred: &[PoseFrame], gt: &[PoseFrame]) -> Result<f64> {
    mde_with(pred, gt, MdeMode::Distance)
}

/// Mean displacement error over several sequences.
pub fn mde_mean(pairs: &[(&[PoseFrame], &[PoseFrame])], mode: MdeMode) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("no sequences".into()));
    }
    let mut total = 0.0;
    for (p, g) in pairs {
        total += mde_with(p, g, mode)?;
    }
    Ok(total / pairs.len() as f64)
}
