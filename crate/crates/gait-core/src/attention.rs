//! Clip-wise temporal attention, shared by the appearance and pose branches.
//!
//! A frame-feature sequence [T, D] is split into S = floor(T/L)
//! non-overlapping clips of L frames (trailing frames dropped). Two
//! per-frame scoring layers produce one logit per frame; a softmax over the
//! L positions yields the attention weights that aggregate each clip into a
//! single feature row. With the second scoring layer zero-initialized the
//! weights are uniform and aggregation is exactly the clip mean.

use crate::error::ModelError;
use crate::scalar::Scalar;
use crate::tensor::{concat, Tensor};

/// Clips of a frame-feature sequence: a [S, L, D] tensor plus the count of
/// dropped trailing frames.
#[derive(Debug)]
pub struct ClipBatch<T: Scalar> {
    pub clips: Tensor<T>,
    pub dropped: usize,
}

impl<T: Scalar> ClipBatch<T> {
    pub fn clip_count(&self) -> usize {
        self.clips.shape()[0]
    }

    pub fn clip_len(&self) -> usize {
        self.clips.shape()[1]
    }

    pub fn feature_dim(&self) -> usize {
        self.clips.shape()[2]
    }
}

/// Scoring layers for one branch: per-frame D -> d_a -> 1.
pub struct TaParams<T: Scalar> {
    pub w1: Tensor<T>, // [D, d_a]
    pub b1: Tensor<T>, // [d_a]
    pub w2: Tensor<T>, // [d_a, 1]
    pub b2: Tensor<T>, // [1]
}

/// Hidden width of the scoring layers for a feature dimension.
pub fn hidden_width(d: usize) -> usize {
    (d / 16).max(8)
}

/// Split [T, D] into S = floor(T/L) contiguous clips, dropping the trailing
/// T - S*L frames.
pub fn clip_split<T: Scalar>(x: &Tensor<T>, clip_len: usize) -> Result<ClipBatch<T>, ModelError> {
    if x.rank() != 2 {
        return Err(ModelError::Config(format!(
            "clip_split expects a [T, D] tensor, got shape {:?}",
            x.shape()
        )));
    }
    let (t, d) = (x.shape()[0], x.shape()[1]);
    if clip_len == 0 || t < clip_len {
        return Err(ModelError::Config(format!(
            "sequence length {t} is shorter than clip length {clip_len}"
        )));
    }
    let s = t / clip_len;
    let dropped = t - s * clip_len;
    let used = x.slice_axis(0, 0, s * clip_len)?;
    let clips = used.reshape(&[s, clip_len, d])?;
    Ok(ClipBatch { clips, dropped })
}

/// Attention weights for one clip [L, D]: softmax over the L frame scores.
pub fn ta_weights<T: Scalar>(
    clip: &Tensor<T>,
    params: &TaParams<T>,
) -> Result<Tensor<T>, ModelError> {
    let hidden = clip.linear(&params.w1, &params.b1)?.tanh(); // [L, d_a]
    let logits = hidden.linear(&params.w2, &params.b2)?; // [L, 1]
    let row = logits.reshape(&[1, logits.shape()[0]])?;
    Ok(row.softmax(1)?)
}

/// Weighted sum of the L frame features: [1, L] x [L, D] -> [1, D].
pub fn ta_apply<T: Scalar>(
    clip: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<Tensor<T>, ModelError> {
    if weights.rank() != 2 || weights.shape()[0] != 1 || weights.shape()[1] != clip.shape()[0] {
        return Err(ModelError::Tensor(crate::error::TensorError::ShapeMismatch {
            op: "ta_apply",
            lhs: weights.shape().to_vec(),
            rhs: clip.shape().to_vec(),
        }));
    }
    Ok(weights.matmul(clip)?)
}

/// Score and aggregate every clip independently: [S, L, D] -> [S, D].
pub fn ta_aggregate<T: Scalar>(
    clips: &ClipBatch<T>,
    params: &TaParams<T>,
) -> Result<Tensor<T>, ModelError> {
    let (s, l, d) = (
        clips.clip_count(),
        clips.clip_len(),
        clips.feature_dim(),
    );
    let mut rows = Vec::with_capacity(s);
    for i in 0..s {
        let clip = clips.clips.slice_axis(0, i, i + 1)?.reshape(&[l, d])?;
        let weights = ta_weights(&clip, params)?;
        rows.push(ta_apply(&clip, &weights)?);
    }
    let refs: Vec<&Tensor<T>> = rows.iter().collect();
    Ok(concat(&refs, 0)?)
}
