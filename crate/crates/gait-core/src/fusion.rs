//! Fusion head: concatenate appearance and pose clip features, pool the
//! clip axis with GeM, and emit C embeddings through C independent affine
//! heads applied to the same pooled vector.

use crate::attention::{clip_split, ta_aggregate};
use crate::backbone::backbone_forward;
use crate::data::{KeypointSequence, SilhouetteSequence};
use crate::error::ModelError;
use crate::model::{ModelBound, ModelConfig};
use crate::pose::pose_forward;
use crate::scalar::{lit, Scalar};
use crate::tensor::{concat, Tensor};

/// C embedding vectors of width d_e, as plain f64 values (row-major C x
/// d_e). This is the value type the evaluation protocol stores and ships.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub heads: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl EmbeddingSet {
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self, ModelError> {
        if t.rank() != 2 {
            return Err(ModelError::Config(format!(
                "embedding tensor must be [C, d_e], got {:?}",
                t.shape()
            )));
        }
        Ok(EmbeddingSet {
            heads: t.shape()[0],
            dim: t.shape()[1],
            values: t.data().iter().map(|v| v.to_f64().unwrap()).collect(),
        })
    }

    pub fn head(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Row-wise concatenation of appearance and pose clip features.
pub fn fuse_clips<T: Scalar>(
    app: &Tensor<T>,
    pose: &Tensor<T>,
) -> Result<Tensor<T>, ModelError> {
    if app.rank() != 2 || pose.rank() != 2 || app.shape()[0] != pose.shape()[0] {
        return Err(ModelError::Tensor(crate::error::TensorError::ShapeMismatch {
            op: "fuse_clips",
            lhs: app.shape().to_vec(),
            rhs: pose.shape().to_vec(),
        }));
    }
    Ok(concat(&[app, pose], 1)?)
}

/// Generalized-mean pool over the clip axis: per column,
/// (mean_clips f^p)^(1/p). Values are clamped at 1e-6 before powering, so
/// callers should pass features through a non-negativity map first.
pub fn clip_gem<T: Scalar>(f: &Tensor<T>, p: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
    if f.rank() != 2 {
        return Err(ModelError::Config(format!(
            "clip_gem expects [S, D], got {:?}",
            f.shape()
        )));
    }
    let d = f.shape()[1];
    let clamped = f.clamp_min(lit(1e-6));
    let powered = clamped.pow_t(p)?;
    let mean = powered.mean_axis(0)?; // [D]
    let pooled = mean.pow_t(&p.recip())?;
    Ok(pooled.reshape(&[1, d])?)
}

/// Apply the C independent heads to the same pooled vector -> [C, d_e].
pub fn heads_forward<T: Scalar>(
    f: &Tensor<T>,
    heads: &[(Tensor<T>, Tensor<T>)],
) -> Result<Tensor<T>, ModelError> {
    if heads.is_empty() {
        return Err(ModelError::Config("no embedding heads configured".into()));
    }
    let mut rows = Vec::with_capacity(heads.len());
    for (w, b) in heads {
        rows.push(f.linear(w, b)?);
    }
    let refs: Vec<&Tensor<T>> = rows.iter().collect();
    Ok(concat(&refs, 0)?)
}

/// Full pipeline for one sequence window: backbone, clip attention on both
/// branches, fusion, clip GeM, heads. Output is [C, d_e].
pub fn model_forward<T: Scalar>(
    sil: &SilhouetteSequence,
    keys: &KeypointSequence,
    bound: &ModelBound<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>, ModelError> {
    let t = sil.frame_count();
    if keys.frame_count() != t {
        return Err(ModelError::Keypoints(format!(
            "sequence {}: {} silhouette frames vs {} keypoint frames",
            sil.id(),
            t,
            keys.frame_count()
        )));
    }
    if t < cfg.clip_len {
        return Err(ModelError::SequenceTooShort {
            id: sil.id(),
            len: t,
            clip_len: cfg.clip_len,
        });
    }
    let x = sil.full_tensor::<T>();
    let frames = backbone_forward(&x, &bound.backbone, &cfg.backbone)?; // [T, D_GL]
    let clips = clip_split(&frames, cfg.clip_len)?;
    let app = ta_aggregate(&clips, &bound.ta_app)?; // [S, D_GL]
    let s = app.shape()[0];
    let pose = if cfg.use_pose {
        pose_forward(keys, &bound.pose, cfg.clip_len)?
    } else {
        Tensor::zeros(&[s, cfg.pose_dim])
    };
    let fused = fuse_clips(&app, &pose)?;
    let nonneg = fused.softplus();
    let pooled = clip_gem(&nonneg, &bound.clip_p)?; // [1, D]
    heads_forward(&pooled, &bound.heads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{micro_config, Binding, ModelParams};
    use crate::tensor::backward_seeded;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    type T64 = Tensor<f64>;

    fn rand_tensor(rng: &mut ChaCha12Rng, shape: &[usize]) -> T64 {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        T64::from_vec(shape, data).unwrap()
    }

    #[test]
    fn fuse_clips_widths_add() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let app = rand_tensor(&mut rng, &[3, 8]);
        let pose = rand_tensor(&mut rng, &[3, 4]);
        let fused = fuse_clips(&app, &pose).unwrap();
        assert_eq!(fused.shape(), &[3, 12]);
        for s in 0..3 {
            assert_eq!(&fused.data()[s * 12..s * 12 + 8], &app.data()[s * 8..(s + 1) * 8]);
        }
    }

    #[test]
    fn fuse_clips_zero_pose_keeps_appearance_intact() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let app = rand_tensor(&mut rng, &[2, 5]);
        let pose = T64::zeros(&[2, 3]);
        let fused = fuse_clips(&app, &pose).unwrap();
        for s in 0..2 {
            assert_eq!(&fused.data()[s * 8..s * 8 + 5], &app.data()[s * 5..(s + 1) * 5]);
            assert!(fused.data()[s * 8 + 5..(s + 1) * 8].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn fuse_clips_mismatched_rows_rejected() {
        let app = T64::ones(&[3, 4]);
        let pose = T64::ones(&[2, 4]);
        assert!(fuse_clips(&app, &pose).is_err());
    }

    #[test]
    fn clip_gem_p1_is_exact_clip_mean() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..2.0)).collect();
        let f = T64::from_vec(&[3, 4], data).unwrap();
        let gem = clip_gem(&f, &T64::scalar(1.0)).unwrap();
        let mean = f.mean_axis(0).unwrap();
        for (a, b) in gem.data().iter().zip(mean.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_gem_single_clip_is_identity() {
        let f = T64::from_vec(&[1, 3], vec![0.5, 1.5, 2.5]).unwrap();
        for p in [1.0, 2.0, 7.0] {
            let gem = clip_gem(&f, &T64::scalar(p)).unwrap();
            for (a, b) in gem.data().iter().zip(f.data()) {
                assert!((a - b).abs() < 1e-9, "p={p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn clip_gem_p2_hand_value() {
        let f = T64::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
        let gem = clip_gem(&f, &T64::scalar(2.0)).unwrap();
        assert!((gem.data()[0] - 12.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn heads_forward_single_head_is_linear_map() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let f = rand_tensor(&mut rng, &[1, 6]);
        let w = rand_tensor(&mut rng, &[6, 3]);
        let b = rand_tensor(&mut rng, &[3]);
        let heads = vec![(w.clone(), b.clone())];
        let out = heads_forward(&f, &heads).unwrap();
        let expect = f.linear(&w, &b).unwrap();
        assert_eq!(out.data(), expect.data());
    }

    #[test]
    fn heads_forward_identical_heads_identical_rows() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let f = rand_tensor(&mut rng, &[1, 6]);
        let w = rand_tensor(&mut rng, &[6, 3]);
        let b = rand_tensor(&mut rng, &[3]);
        let heads = vec![(w.clone(), b.clone()), (w, b)];
        let out = heads_forward(&f, &heads).unwrap();
        assert_eq!(&out.data()[0..3], &out.data()[3..6]);
    }

    #[test]
    fn head_perturbation_only_moves_its_own_embedding() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let f = rand_tensor(&mut rng, &[1, 6]);
        let mk = |rng: &mut ChaCha12Rng| (rand_tensor(rng, &[6, 3]), rand_tensor(rng, &[3]));
        let h0 = mk(&mut rng);
        let h1 = mk(&mut rng);
        let out = heads_forward(&f, &[h0.clone(), h1.clone()]).unwrap();
        let mut h1b = h1.clone();
        let mut wd = h1b.0.to_vec();
        wd[0] += 0.5;
        h1b.0 = T64::from_vec(&[6, 3], wd).unwrap();
        let out2 = heads_forward(&f, &[h0, h1b]).unwrap();
        assert_eq!(&out.data()[0..3], &out2.data()[0..3], "head 0 unchanged");
        assert_ne!(&out.data()[3..6], &out2.data()[3..6], "head 1 changed");
    }

    #[test]
    fn head_independence_zero_cross_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let f = T64::param(&[1, 6], (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let w0 = T64::param(&[6, 2], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let b0 = T64::param(&[2], vec![0.0; 2]).unwrap();
        let w1 = T64::param(&[6, 2], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let b1 = T64::param(&[2], vec![0.0; 2]).unwrap();
        let out = heads_forward(&f, &[(w0.clone(), b0.clone()), (w1.clone(), b1.clone())]).unwrap();
        // loss touches only head 0's row
        let head0 = out.slice_axis(0, 0, 1).unwrap();
        let loss = head0.mul(&head0).unwrap().sum_all();
        loss.backward().unwrap();
        assert!(w1.grad_or_zeros().iter().all(|&g| g == 0.0));
        assert!(b1.grad_or_zeros().iter().all(|&g| g == 0.0));
        assert!(w0.grad_or_zeros().iter().any(|&g| g != 0.0));
    }

    fn micro_sequences(t: usize) -> (SilhouetteSequence, KeypointSequence) {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        crate::battery::micro_item(&mut rng, "001", 0, t)
    }

    #[test]
    fn model_forward_contract_shape() {
        let cfg = micro_config();
        let params = ModelParams::<f64>::init(&cfg, 5).unwrap();
        let binding = Binding::new(&params, false);
        let bound = ModelBound::from_binding(&binding, &cfg).unwrap();
        let (sil, keys) = micro_sequences(4);
        let out = model_forward(&sil, &keys, &bound, &cfg).unwrap();
        assert_eq!(out.shape(), &[cfg.heads, cfg.embed_dim]);
        let set = EmbeddingSet::from_tensor(&out).unwrap();
        assert!(set.is_finite());
    }

    #[test]
    fn model_forward_too_short_names_sequence() {
        let cfg = micro_config();
        let params = ModelParams::<f64>::init(&cfg, 5).unwrap();
        let binding = Binding::new(&params, false);
        let bound = ModelBound::from_binding(&binding, &cfg).unwrap();
        let (sil, keys) = micro_sequences(1);
        let err = model_forward(&sil, &keys, &bound, &cfg).unwrap_err().to_string();
        assert!(err.contains("001-NM-00-090"), "{err}");
    }

    #[test]
    fn model_forward_repeating_sequence_keeps_embeddings_with_mean_pooling() {
        // Uniform-initialized attention (zero scoring layer) and p_c = 1:
        // repeating the frames doubles the clip count with identical clip
        // features, so the clip mean and the embeddings stay put.
        let mut cfg = micro_config();
        cfg.clip_p = 1.0;
        let params = ModelParams::<f64>::init(&cfg, 6).unwrap();
        let binding = Binding::new(&params, false);
        let bound = ModelBound::from_binding(&binding, &cfg).unwrap();
        let (sil, keys) = micro_sequences(4);
        let out1 = model_forward(&sil, &keys, &bound, &cfg).unwrap();

        let mut doubled = Vec::new();
        for t in 0..4 {
            doubled.extend_from_slice(sil.frame(t));
        }
        let mut pixels = doubled.clone();
        pixels.extend_from_slice(&doubled);
        let sil2 = SilhouetteSequence::new("001".into(), crate::data::Condition::Nm, 0, 90, 8, 6, pixels)
            .unwrap();
        let mut kf = keys.frames.clone();
        kf.extend_from_slice(&keys.frames);
        let keys2 = KeypointSequence { frames: kf };
        let out2 = model_forward(&sil2, &keys2, &bound, &cfg).unwrap();
        for (a, b) in out1.data().iter().zip(out2.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn learnable_gem_exponent_receives_gradient() {
        let mut cfg = micro_config();
        cfg.backbone.gem_learnable = true;
        let params = ModelParams::<f64>::init(&cfg, 8).unwrap();
        let binding = Binding::new(&params, true);
        let bound = ModelBound::from_binding(&binding, &cfg).unwrap();
        let (sil, keys) = micro_sequences(4);
        let out = model_forward(&sil, &keys, &bound, &cfg).unwrap();
        let loss = out.mul(&out).unwrap().sum_all();
        loss.backward().unwrap();
        let g = binding.grads();
        let gem = g.iter().find(|(n, _)| n == "backbone.gem_p").unwrap();
        assert!(gem.1[0] != 0.0, "gem exponent must be trainable");
    }

    #[test]
    fn model_forward_pose_ablation_zeroes_pose_contribution() {
        let mut cfg = micro_config();
        cfg.use_pose = false;
        let params = ModelParams::<f64>::init(&cfg, 7).unwrap();
        let binding = Binding::new(&params, true);
        let bound = ModelBound::from_binding(&binding, &cfg).unwrap();
        let (sil, keys) = micro_sequences(4);
        let out = model_forward(&sil, &keys, &bound, &cfg).unwrap();
        let seed = vec![1.0; out.len()];
        backward_seeded(&[(&out, seed)]).unwrap();
        let g = binding.grads();
        let enc = g.iter().find(|(n, _)| n == "pose.enc1.weight").unwrap();
        assert!(enc.1.iter().all(|&v| v == 0.0), "pose branch must be inert");
        let stem = g.iter().find(|(n, _)| n == "stem.kernel").unwrap();
        assert!(stem.1.iter().any(|&v| v != 0.0));
    }
}
