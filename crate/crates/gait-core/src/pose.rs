//! Pose branch: keypoint normalization, a small per-frame encoder, and the
//! shared temporal-attention aggregation.
//!
//! Normalization translates each frame so the hip midpoint is the origin
//! and divides coordinates by the torso length (hip midpoint to shoulder
//! midpoint), which makes the branch exactly invariant to global
//! translation and uniform scaling of the input skeleton. Confidences pass
//! through untouched.

use crate::attention::{clip_split, ta_aggregate, TaParams};
use crate::data::{joints, KeypointSequence, JOINT_COUNT};
use crate::error::ModelError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const POSE_INPUT_DIM: usize = JOINT_COUNT * 3;

/// Per-frame encoder weights plus the pose-branch attention, bound into the
/// current graph.
pub struct PoseBound<T: Scalar> {
    pub enc1_weight: Tensor<T>, // [51, d_p]
    pub enc1_bias: Tensor<T>,   // [d_p]
    pub enc2_weight: Tensor<T>, // [d_p, d_p]
    pub enc2_bias: Tensor<T>,   // [d_p]
    pub ta: TaParams<T>,
}

const DEGENERATE_TORSO: f64 = 1e-6;

/// Normalize a keypoint sequence to a [T, 51] row-major buffer.
///
/// Frames with a degenerate torso (length < 1e-6) are flagged and replaced
/// by the nearest preceding valid frame (leading degenerate frames borrow
/// the first valid one); an all-degenerate sequence is rejected.
pub fn normalize_keypoints(k: &KeypointSequence) -> Result<Vec<f64>, ModelError> {
    let t = k.frame_count();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; t];
    let mut any_valid = false;
    for (ti, frame) in k.frames.iter().enumerate() {
        let hip_mid = [
            (frame[joints::LEFT_HIP][0] + frame[joints::RIGHT_HIP][0]) / 2.0,
            (frame[joints::LEFT_HIP][1] + frame[joints::RIGHT_HIP][1]) / 2.0,
        ];
        let shoulder_mid = [
            (frame[joints::LEFT_SHOULDER][0] + frame[joints::RIGHT_SHOULDER][0]) / 2.0,
            (frame[joints::LEFT_SHOULDER][1] + frame[joints::RIGHT_SHOULDER][1]) / 2.0,
        ];
        let torso = ((shoulder_mid[0] - hip_mid[0]).powi(2)
            + (shoulder_mid[1] - hip_mid[1]).powi(2))
        .sqrt();
        if torso < DEGENERATE_TORSO {
            continue;
        }
        any_valid = true;
        let mut row = Vec::with_capacity(POSE_INPUT_DIM);
        for joint in frame {
            row.push((joint[0] - hip_mid[0]) / torso);
            row.push((joint[1] - hip_mid[1]) / torso);
            row.push(joint[2]);
        }
        rows[ti] = Some(row);
    }
    if !any_valid {
        return Err(ModelError::Keypoints(
            "all frames have a degenerate torso".into(),
        ));
    }
    // Fill flagged frames from neighbours: previous valid, or the first
    // valid one for a degenerate prefix.
    let first_valid = rows.iter().position(|r| r.is_some()).unwrap();
    let mut last_valid = first_valid;
    let mut out = Vec::with_capacity(t * POSE_INPUT_DIM);
    for ti in 0..t {
        if rows[ti].is_some() {
            last_valid = ti;
        }
        let src = if rows[ti].is_some() { ti } else if ti < first_valid { first_valid } else { last_valid };
        out.extend_from_slice(rows[src].as_ref().unwrap());
    }
    Ok(out)
}

/// Full pose branch: normalize, encode per frame, split into clips of the
/// same length as the appearance branch, aggregate with pose attention.
/// Output is [S, d_p].
pub fn pose_forward<T: Scalar>(
    k: &KeypointSequence,
    params: &PoseBound<T>,
    clip_len: usize,
) -> Result<Tensor<T>, ModelError> {
    let t = k.frame_count();
    let normalized = normalize_keypoints(k)?;
    let data: Vec<T> = normalized
        .iter()
        .map(|&v| T::from_f64(v).expect("keypoint value representable"))
        .collect();
    let x = Tensor::from_vec(&[t, POSE_INPUT_DIM], data)?;
    let hidden = x.linear(&params.enc1_weight, &params.enc1_bias)?.tanh();
    let encoded = hidden.linear(&params.enc2_weight, &params.enc2_bias)?;
    let clips = clip_split(&encoded, clip_len)?;
    ta_aggregate(&clips, &params.ta)
}
