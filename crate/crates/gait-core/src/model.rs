//! Model configuration, the named parameter store, and per-graph bindings.
//!
//! Parameters live outside any graph as shared payloads; each forward pass
//! binds them as fresh leaf tensors (trainable or frozen). Names are stable
//! and ordered, which checkpoints, the optimizer and gradient accumulation
//! all rely on.

use std::collections::HashMap;
use std::sync::Arc;

use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::attention::{hidden_width, TaParams};
use crate::backbone::{BackboneBound, BackboneConfig, GlBlock};
use crate::error::ModelError;
use crate::pose::{PoseBound, POSE_INPUT_DIM};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Clip length L shared by both branches.
    pub clip_len: usize,
    /// Pose feature width d_p.
    pub pose_dim: usize,
    /// Number of embedding heads C.
    pub heads: usize,
    /// Embedding width d_e.
    pub embed_dim: usize,
    /// Clip-axis GeM exponent p_c.
    pub clip_p: f64,
    /// Zero the pose branch (ablation switch). Parameters and feature
    /// widths are unchanged so checkpoints stay compatible.
    pub use_pose: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            clip_len: 10,
            pose_dim: 64,
            heads: 8,
            embed_dim: 64,
            clip_p: 1.0,
            use_pose: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.backbone.validate()?;
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.clip_len == 0 {
            return fail("clip length must be >= 1".into());
        }
        if self.pose_dim == 0 || self.heads == 0 || self.embed_dim == 0 {
            return fail("pose_dim, heads and embed_dim must be >= 1".into());
        }
        if self.clip_p < 1.0 {
            return fail(format!("clip GeM exponent p_c must be >= 1, got {}", self.clip_p));
        }
        Ok(())
    }

    /// Width of the fused per-clip feature.
    pub fn fused_dim(&self) -> usize {
        self.backbone.d_gl() + self.pose_dim
    }
}

/// One named parameter block.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Arc<Vec<T>>,
}

impl<T: Scalar> Param<T> {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// The complete set of learnable tensors with a stable naming scheme.
#[derive(Debug, Clone)]
pub struct ModelParams<T: Scalar> {
    entries: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ModelParams<T> {
    fn push(&mut self, name: &str, shape: &[usize], data: Vec<T>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: Arc::new(data),
        });
    }

    pub fn entries(&self) -> &[Param<T>] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.by_name.get(name).map(|&i| &self.entries[i])
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|p| p.len()).sum()
    }

    /// Mutable view of one block's values (copy-on-write if a graph still
    /// holds the old payload).
    pub fn data_mut(&mut self, index: usize) -> &mut Vec<T> {
        Arc::make_mut(&mut self.entries[index].data)
    }

    /// Initialize all parameters for a config. Weights draw from scaled
    /// normals (std = sqrt(2 / fan_in)); biases start at zero; the second
    /// attention scoring layer starts at zero so aggregation begins as the
    /// per-clip mean.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = crate::seeds::substream(seed, "init");
        let mut params = ModelParams {
            entries: Vec::new(),
            by_name: HashMap::new(),
        };
        let bb = &cfg.backbone;

        let normal = |shape: &[usize], fan_in: usize, rng: &mut ChaCha12Rng| -> Vec<T> {
            let std = (2.0 / fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("valid std");
            (0..shape.iter().product::<usize>())
                .map(|_| lit::<T>(dist.sample(rng)))
                .collect()
        };

        let stk = bb.stem_temporal_kernel;
        let stem_shape = [bb.channels[0], 1, stk, 3, 3];
        let data = normal(&stem_shape, stk * 9, &mut rng);
        params.push("stem.kernel", &stem_shape, data);
        params.push("stem.bias", &[bb.channels[0]], vec![T::zero(); bb.channels[0]]);

        for i in 0..bb.blocks {
            let (c_in, c_out) = (bb.channels[i], bb.channels[i + 1]);
            let kt = bb.temporal_kernel;
            let shape = [c_out, c_in, kt, 3, 3];
            let fan_in = c_in * kt * 9;
            for branch in ["global", "local"] {
                let data = normal(&shape, fan_in, &mut rng);
                params.push(&format!("glconv{i}.{branch}.kernel"), &shape, data);
                params.push(
                    &format!("glconv{i}.{branch}.bias"),
                    &[c_out],
                    vec![T::zero(); c_out],
                );
            }
        }

        if bb.gem_learnable {
            params.push("backbone.gem_p", &[1], vec![lit::<T>(bb.gem_p)]);
        }

        let d_gl = bb.d_gl();
        for (label, d) in [("ta_app", d_gl), ("ta_pose", cfg.pose_dim)] {
            let da = hidden_width(d);
            let data = normal(&[d, da], d, &mut rng);
            params.push(&format!("{label}.w1"), &[d, da], data);
            params.push(&format!("{label}.b1"), &[da], vec![T::zero(); da]);
            params.push(&format!("{label}.w2"), &[da, 1], vec![T::zero(); da]);
            params.push(&format!("{label}.b2"), &[1], vec![T::zero(); 1]);
        }

        let d_p = cfg.pose_dim;
        let data = normal(&[POSE_INPUT_DIM, d_p], POSE_INPUT_DIM, &mut rng);
        params.push("pose.enc1.weight", &[POSE_INPUT_DIM, d_p], data);
        params.push("pose.enc1.bias", &[d_p], vec![T::zero(); d_p]);
        let data = normal(&[d_p, d_p], d_p, &mut rng);
        params.push("pose.enc2.weight", &[d_p, d_p], data);
        params.push("pose.enc2.bias", &[d_p], vec![T::zero(); d_p]);

        let d_f = cfg.fused_dim();
        for k in 0..cfg.heads {
            let data = normal(&[d_f, cfg.embed_dim], d_f, &mut rng);
            params.push(&format!("head{k}.weight"), &[d_f, cfg.embed_dim], data);
            params.push(
                &format!("head{k}.bias"),
                &[cfg.embed_dim],
                vec![T::zero(); cfg.embed_dim],
            );
        }

        Ok(params)
    }

    /// Check that another parameter set has the same blocks in the same
    /// order; returns the first differing entry.
    pub fn compatible_with(&self, other: &ModelParams<T>) -> Result<(), ModelError> {
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name {
                return Err(ModelError::Config(format!(
                    "parameter name mismatch: {} vs {}",
                    a.name, b.name
                )));
            }
            if a.shape != b.shape {
                return Err(ModelError::Config(format!(
                    "parameter {} shape mismatch: {:?} vs {:?}",
                    a.name, a.shape, b.shape
                )));
            }
        }
        if self.entries.len() != other.entries.len() {
            return Err(ModelError::Config(format!(
                "parameter count mismatch: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        Ok(())
    }
}

/// Leaf tensors for one graph, keyed by parameter name.
pub struct Binding<T: Scalar> {
    map: HashMap<String, Tensor<T>>,
    order: Vec<String>,
}

impl<T: Scalar> Binding<T> {
    /// Bind existing leaf tensors under given names (used by gradient
    /// checks that perturb parameters coordinate by coordinate).
    pub fn from_tensors(names: &[String], tensors: &[Tensor<T>]) -> Self {
        debug_assert_eq!(names.len(), tensors.len());
        let mut map = HashMap::new();
        let mut order = Vec::new();
        for (name, t) in names.iter().zip(tensors) {
            map.insert(name.clone(), t.clone());
            order.push(name.clone());
        }
        Binding { map, order }
    }

    pub fn new(params: &ModelParams<T>, trainable: bool) -> Self {
        let mut map = HashMap::new();
        let mut order = Vec::new();
        for p in params.entries() {
            let t = Tensor::from_shared(&p.shape, Arc::clone(&p.data), trainable)
                .expect("stored parameter shape is consistent");
            map.insert(p.name.clone(), t);
            order.push(p.name.clone());
        }
        Binding { map, order }
    }

    pub fn get(&self, name: &str) -> Result<Tensor<T>, ModelError> {
        self.map
            .get(name)
            .cloned()
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    /// Per-block gradients in parameter order (zeros for unreached blocks).
    pub fn grads(&self) -> Vec<(String, Vec<T>)> {
        self.order
            .iter()
            .map(|name| (name.clone(), self.map[name].grad_or_zeros()))
            .collect()
    }
}

/// All weights bound into one graph, grouped for the forward pass.
pub struct ModelBound<T: Scalar> {
    pub backbone: BackboneBound<T>,
    pub ta_app: TaParams<T>,
    pub pose: PoseBound<T>,
    pub heads: Vec<(Tensor<T>, Tensor<T>)>,
    pub clip_p: Tensor<T>,
}

impl<T: Scalar> ModelBound<T> {
    pub fn from_binding(binding: &Binding<T>, cfg: &ModelConfig) -> Result<Self, ModelError> {
        let bb = &cfg.backbone;
        let mut blocks = Vec::with_capacity(bb.blocks);
        for i in 0..bb.blocks {
            blocks.push(GlBlock {
                global_kernel: binding.get(&format!("glconv{i}.global.kernel"))?,
                global_bias: binding.get(&format!("glconv{i}.global.bias"))?,
                local_kernel: binding.get(&format!("glconv{i}.local.kernel"))?,
                local_bias: binding.get(&format!("glconv{i}.local.bias"))?,
            });
        }
        let gem_p = if bb.gem_learnable {
            binding.get("backbone.gem_p")?
        } else {
            Tensor::scalar(lit::<T>(bb.gem_p))
        };
        let ta = |label: &str| -> Result<TaParams<T>, ModelError> {
            Ok(TaParams {
                w1: binding.get(&format!("{label}.w1"))?,
                b1: binding.get(&format!("{label}.b1"))?,
                w2: binding.get(&format!("{label}.w2"))?,
                b2: binding.get(&format!("{label}.b2"))?,
            })
        };
        let mut heads = Vec::with_capacity(cfg.heads);
        for k in 0..cfg.heads {
            heads.push((
                binding.get(&format!("head{k}.weight"))?,
                binding.get(&format!("head{k}.bias"))?,
            ));
        }
        Ok(ModelBound {
            backbone: BackboneBound {
                stem_kernel: binding.get("stem.kernel")?,
                stem_bias: binding.get("stem.bias")?,
                blocks,
                gem_p,
            },
            ta_app: ta("ta_app")?,
            pose: PoseBound {
                enc1_weight: binding.get("pose.enc1.weight")?,
                enc1_bias: binding.get("pose.enc1.bias")?,
                enc2_weight: binding.get("pose.enc2.weight")?,
                enc2_bias: binding.get("pose.enc2.bias")?,
                ta: ta("ta_pose")?,
            },
            heads,
            clip_p: Tensor::scalar(lit::<T>(cfg.clip_p)),
        })
    }
}

/// Micro configuration used by gradient checks: tiny frames, two blocks'
/// worth of channels, two heads.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            partitions: 2,
            blocks: 2,
            channels: vec![2, 2, 2],
            input_pool: 1,
            stem_pool: false,
            stem_temporal_kernel: 1,
            temporal_kernel: 1,
            gem_p: 3.0,
            gem_learnable: false,
            frame_height: 8,
            frame_width: 6,
        },
        clip_len: 2,
        pose_dim: 6,
        heads: 2,
        embed_dim: 8,
        clip_p: 1.0,
        use_pose: true,
    }
}
