//! Global/local 3D-convolution backbone.
//!
//! The stem lifts silhouettes to c1 channels, an optional 2x2 max-pool
//! halves the spatial extents, then a stack of GLConv blocks fuses a
//! whole-map convolution with a partition-wise convolution whose kernel is
//! shared across the m horizontal strips. All blocks but the last fuse by
//! addition (height preserved); the last fuses by height-wise concatenation
//! (height doubled). Generalized-mean pooling collapses the width axis and
//! each frame is flattened to a feature row.

use crate::error::ModelError;
use crate::scalar::{lit, Scalar};
use crate::tensor::{concat, Tensor};

#[derive(Debug, Clone)]
pub struct BackboneConfig {
    /// Horizontal partitions m for the local branch.
    pub partitions: usize,
    /// GLConv block count n; the first n-1 are additive, the last
    /// concatenates.
    pub blocks: usize,
    /// Channel plan: stem output c1 followed by one c2 per block.
    pub channels: Vec<usize>,
    /// Average-pool factor applied to the raw frames before the stem
    /// (1 = none). Keeps desk-scale configs fast without touching the data.
    pub input_pool: usize,
    /// 2x2 spatial max-pool after the stem.
    pub stem_pool: bool,
    /// Temporal extent of the stem kernel (odd; 1 keeps frames independent).
    pub stem_temporal_kernel: usize,
    /// Temporal extent of the GLConv kernels (odd).
    pub temporal_kernel: usize,
    /// Spatial GeM exponent p_s.
    pub gem_p: f64,
    /// Learn p_s instead of keeping it fixed.
    pub gem_learnable: bool,
    /// Expected input frame size.
    pub frame_height: usize,
    pub frame_width: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            partitions: 4,
            blocks: 3,
            channels: vec![32, 64, 128, 128],
            input_pool: 1,
            stem_pool: true,
            stem_temporal_kernel: 1,
            temporal_kernel: 3,
            gem_p: 3.0,
            gem_learnable: false,
            frame_height: 64,
            frame_width: 44,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.blocks < 2 {
            return fail(format!(
                "need at least 2 GLConv blocks (one additive, one concatenating), got {}",
                self.blocks
            ));
        }
        if self.channels.len() != self.blocks + 1 {
            return fail(format!(
                "channel plan has {} entries, expected blocks + 1 = {}",
                self.channels.len(),
                self.blocks + 1
            ));
        }
        if self.channels.contains(&0) {
            return fail("channel plan contains a zero width".into());
        }
        if self.partitions == 0 {
            return fail("partition count must be >= 1".into());
        }
        if self.stem_temporal_kernel.is_multiple_of(2) || self.temporal_kernel.is_multiple_of(2) {
            return fail("temporal kernel extents must be odd so frame count is preserved".into());
        }
        if self.gem_p < 1.0 {
            return fail(format!("gem exponent p_s must be >= 1, got {}", self.gem_p));
        }
        if self.input_pool == 0
            || !self.frame_height.is_multiple_of(self.input_pool)
            || !self.frame_width.is_multiple_of(self.input_pool)
        {
            return fail(format!(
                "input pool {} does not divide frame size {}x{}",
                self.input_pool, self.frame_height, self.frame_width
            ));
        }
        let (h, w) = self.feature_hw();
        if h == 0 || w == 0 {
            return fail("feature map collapsed to zero extent".into());
        }
        if !h.is_multiple_of(self.partitions) {
            return fail(format!(
                "feature-map height {} at partition time is not divisible by m = {}",
                h, self.partitions
            ));
        }
        Ok(())
    }

    /// Spatial extents of the feature maps the GLConv stack operates on.
    pub fn feature_hw(&self) -> (usize, usize) {
        let mut h = self.frame_height / self.input_pool;
        let mut w = self.frame_width / self.input_pool;
        if self.stem_pool {
            h /= 2;
            w /= 2;
        }
        (h, w)
    }

    /// Flattened per-frame feature width D_GL = c_final * 2 * h_final.
    pub fn d_gl(&self) -> usize {
        let (h, _) = self.feature_hw();
        self.channels.last().unwrap() * 2 * h
    }
}

/// Weights of one GLConv block, bound into the current graph.
pub struct GlBlock<T: Scalar> {
    pub global_kernel: Tensor<T>,
    pub global_bias: Tensor<T>,
    pub local_kernel: Tensor<T>,
    pub local_bias: Tensor<T>,
}

/// All backbone weights, bound into the current graph.
pub struct BackboneBound<T: Scalar> {
    pub stem_kernel: Tensor<T>,
    pub stem_bias: Tensor<T>,
    pub blocks: Vec<GlBlock<T>>,
    /// Scalar GeM exponent (a parameter when learnable, else a constant).
    pub gem_p: Tensor<T>,
}

/// Whole-map convolution branch: kernel c2 x c_in x k_t x 3 x 3, padding
/// chosen to preserve every extent.
pub fn global_branch<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, ModelError> {
    let pad = [
        kernel.shape()[2] / 2,
        kernel.shape()[3] / 2,
        kernel.shape()[4] / 2,
    ];
    Ok(x.conv3d(kernel, bias, pad, [1, 1, 1])?)
}

/// Partition-wise branch: the same kernel applied to each of the m
/// height-strips independently (each strip zero-padded at its own
/// boundaries), results concatenated back along height.
pub fn local_branch<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    partitions: usize,
) -> Result<Tensor<T>, ModelError> {
    let h = x.shape()[2];
    if partitions == 0 || !h.is_multiple_of(partitions) {
        return Err(ModelError::Config(format!(
            "height {h} not divisible by {partitions} partitions"
        )));
    }
    let strip = h / partitions;
    let mut outs = Vec::with_capacity(partitions);
    for i in 0..partitions {
        let part = x.slice_axis(2, i * strip, (i + 1) * strip)?;
        outs.push(global_branch(&part, kernel, bias)?);
    }
    let refs: Vec<&Tensor<T>> = outs.iter().collect();
    Ok(concat(&refs, 2)?)
}

/// Additive fusion of the global and local branches; shape preserved.
pub fn glconv_a<T: Scalar>(
    x: &Tensor<T>,
    block: &GlBlock<T>,
    partitions: usize,
) -> Result<Tensor<T>, ModelError> {
    let g = global_branch(x, &block.global_kernel, &block.global_bias)?;
    let l = local_branch(x, &block.local_kernel, &block.local_bias, partitions)?;
    Ok(g.add(&l)?)
}

/// Concatenating fusion along height; output height is doubled.
pub fn glconv_b<T: Scalar>(
    x: &Tensor<T>,
    block: &GlBlock<T>,
    partitions: usize,
) -> Result<Tensor<T>, ModelError> {
    let g = global_branch(x, &block.global_kernel, &block.global_bias)?;
    let l = local_branch(x, &block.local_kernel, &block.local_bias, partitions)?;
    Ok(concat(&[&g, &l], 2)?)
}

/// Generalized-mean pool over the width axis: per (c, t, h),
/// (mean_w x^p)^(1/p). Inputs are clamped at 1e-6 before powering.
pub fn spatial_gem<T: Scalar>(x: &Tensor<T>, p: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
    let clamped = x.clamp_min(lit(1e-6));
    let powered = clamped.pow_t(p)?;
    let mean = powered.mean_axis(3)?;
    let p_inv = p.recip();
    Ok(mean.pow_t(&p_inv)?)
}

/// Full backbone: stem, GLConv stack, spatial GeM, per-frame flatten.
///
/// Input is a [1, T, h, w] silhouette tensor; output is [T, D_GL].
pub fn backbone_forward<T: Scalar>(
    x: &Tensor<T>,
    params: &BackboneBound<T>,
    cfg: &BackboneConfig,
) -> Result<Tensor<T>, ModelError> {
    let mut feat = if cfg.input_pool > 1 {
        x.avg_pool_hw(cfg.input_pool)?
    } else {
        x.clone()
    };
    feat = global_branch(&feat, &params.stem_kernel, &params.stem_bias)?;
    if cfg.stem_pool {
        feat = feat.max_pool_hw(2)?;
    }
    let n = params.blocks.len();
    for (i, block) in params.blocks.iter().enumerate() {
        feat = if i + 1 < n {
            glconv_a(&feat, block, cfg.partitions)?
        } else {
            glconv_b(&feat, block, cfg.partitions)?
        };
    }
    let pooled = spatial_gem(&feat, &params.gem_p)?; // [c, T, 2h]
    let (c, t, h2) = (pooled.shape()[0], pooled.shape()[1], pooled.shape()[2]);
    let per_frame = pooled.permute(&[1, 0, 2])?; // [T, c, 2h]
    Ok(per_frame.reshape(&[t, c * h2])?)
}
