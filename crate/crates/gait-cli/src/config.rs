//! Run configuration: one TOML file with a section per subsystem, unknown
//! keys rejected, validated as a whole before any work starts.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use gait_core::backbone::BackboneConfig;
use gait_core::data::synth::GenConfig;
use gait_core::data::Condition;
use gait_core::eval::SplitSpec;
use gait_core::loss::TripletConfig;
use gait_core::model::ModelConfig;
use gait_core::train::{BatchSpec, OptimConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    /// Output directory for checkpoints, metrics and reports.
    pub out: PathBuf,
    /// Worker cap for parallel sections (1 = fully serial reference mode).
    pub workers: usize,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out: PathBuf::from("runs/default"),
            workers: 1,
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub root: PathBuf,
    pub identities: usize,
    pub views: Vec<u16>,
    pub conditions: Vec<String>,
    pub sequences_per_cell: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub jitter_std: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            root: PathBuf::from("data/synth"),
            identities: 8,
            views: (0..=180).step_by(18).collect(),
            conditions: vec!["NM".into(), "BG".into(), "CL".into()],
            sequences_per_cell: 2,
            frames: 40,
            height: 64,
            width: 44,
            jitter_std: 0.0,
        }
    }
}

/// Desk-scale model profile: the same architecture as the full-width
/// configuration, shrunk so a default training run finishes in minutes on
/// one CPU core.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub partitions: usize,
    pub blocks: usize,
    pub channels: Vec<usize>,
    pub input_pool: usize,
    pub stem_pool: bool,
    pub stem_temporal_kernel: usize,
    pub temporal_kernel: usize,
    pub gem_p: f64,
    pub gem_learnable: bool,
    pub clip_len: usize,
    pub pose_dim: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub clip_p: f64,
    pub use_pose: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            partitions: 4,
            blocks: 3,
            channels: vec![6, 6, 6, 6],
            input_pool: 4,
            stem_pool: true,
            stem_temporal_kernel: 1,
            temporal_kernel: 3,
            gem_p: 3.0,
            gem_learnable: false,
            clip_len: 10,
            pose_dim: 64,
            heads: 8,
            embed_dim: 64,
            clip_p: 1.0,
            use_pose: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub margin: f64,
    pub identities_per_batch: usize,
    pub seqs_per_identity: usize,
    pub crop: usize,
    pub learning_rate: f64,
    pub steps: u64,
    pub checkpoint_every: u64,
    /// Sequence indices used for training (the rest stay held out).
    pub train_seqs: Vec<u32>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            margin: 0.2,
            identities_per_batch: 8,
            seqs_per_identity: 8,
            crop: 30,
            learning_rate: 1e-3,
            steps: 200,
            checkpoint_every: 100,
            train_seqs: vec![0],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub gallery_condition: String,
    pub gallery_seqs: Vec<u32>,
    pub probe_seqs: Vec<u32>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            gallery_condition: "NM".into(),
            gallery_seqs: vec![0],
            probe_seqs: vec![1],
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
        };
        Ok(cfg)
    }

    fn conditions(&self) -> Result<Vec<Condition>> {
        let mut out = Vec::new();
        for c in &self.dataset.conditions {
            out.push(Condition::from_str(c).map_err(|e| anyhow::anyhow!(e))?);
        }
        if out.is_empty() {
            bail!("dataset.conditions is empty");
        }
        Ok(out)
    }

    pub fn gen_config(&self) -> Result<GenConfig> {
        Ok(GenConfig {
            identities: self.dataset.identities,
            views: self.dataset.views.clone(),
            conditions: self.conditions()?,
            sequences_per_cell: self.dataset.sequences_per_cell,
            frames: self.dataset.frames,
            height: self.dataset.height,
            width: self.dataset.width,
            jitter_std: self.dataset.jitter_std,
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            backbone: BackboneConfig {
                partitions: m.partitions,
                blocks: m.blocks,
                channels: m.channels.clone(),
                input_pool: m.input_pool,
                stem_pool: m.stem_pool,
                stem_temporal_kernel: m.stem_temporal_kernel,
                temporal_kernel: m.temporal_kernel,
                gem_p: m.gem_p,
                gem_learnable: m.gem_learnable,
                frame_height: self.dataset.height,
                frame_width: self.dataset.width,
            },
            clip_len: m.clip_len,
            pose_dim: m.pose_dim,
            heads: m.heads,
            embed_dim: m.embed_dim,
            clip_p: m.clip_p,
            use_pose: m.use_pose,
        }
    }

    pub fn batch_spec(&self) -> BatchSpec {
        BatchSpec {
            identities_per_batch: self.train.identities_per_batch,
            seqs_per_identity: self.train.seqs_per_identity,
            crop_len: self.train.crop,
        }
    }

    pub fn triplet_config(&self) -> TripletConfig {
        TripletConfig {
            margin: self.train.margin,
        }
    }

    pub fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            learning_rate: self.train.learning_rate,
            ..OptimConfig::default()
        }
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        Ok(SplitSpec {
            gallery_condition: Condition::from_str(&self.eval.gallery_condition)
                .map_err(|e| anyhow::anyhow!(e))?,
            gallery_seqs: self.eval.gallery_seqs.clone(),
            probe_seqs: self.eval.probe_seqs.clone(),
        })
    }

    /// Whole-config validation; nothing runs until this passes.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.identities == 0 {
            bail!("dataset.identities must be >= 1");
        }
        if d.views.is_empty() {
            bail!("dataset.views is empty");
        }
        for &v in &d.views {
            if v >= 360 {
                bail!("dataset.views contains invalid view {v} (degrees in 0..360)");
            }
        }
        let mut sorted = d.views.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != d.views.len() {
            bail!("dataset.views contains duplicates");
        }
        self.conditions()?;
        if d.sequences_per_cell == 0 || d.frames == 0 {
            bail!("dataset.sequences_per_cell and dataset.frames must be >= 1");
        }
        if d.jitter_std < 0.0 {
            bail!("dataset.jitter_std must be non-negative");
        }
        self.model_config()
            .validate()
            .map_err(|e| anyhow::anyhow!("model config: {e}"))?;
        if self.train.margin < 0.0 {
            bail!("train.margin must be non-negative");
        }
        if self.train.identities_per_batch < 2 || self.train.seqs_per_identity < 2 {
            bail!(
                "triplets need train.identities_per_batch >= 2 and train.seqs_per_identity >= 2"
            );
        }
        if self.train.crop < self.model.clip_len {
            bail!(
                "train.crop ({}) must be >= model.clip_len ({})",
                self.train.crop,
                self.model.clip_len
            );
        }
        if self.train.learning_rate < 0.0 {
            bail!("train.learning_rate must be non-negative");
        }
        if self.train.train_seqs.is_empty() {
            bail!("train.train_seqs is empty");
        }
        let spec = self.split_spec()?;
        if spec.gallery_seqs.is_empty() || spec.probe_seqs.is_empty() {
            bail!("eval.gallery_seqs and eval.probe_seqs must be non-empty");
        }
        if spec.gallery_seqs.iter().any(|s| spec.probe_seqs.contains(s)) {
            bail!("eval.gallery_seqs and eval.probe_seqs overlap; probes must stay held out");
        }
        Ok(())
    }
}
