//! P x K batch sampling, the training step, and the training loop.
//!
//! A step runs three phases: per-item forward passes (parallel across
//! items), the batch-level triplet loss on re-leafed embeddings, and
//! per-item backward passes seeded with the loss gradients. Gradients are
//! accumulated in item order and the update is a single serialized phase,
//! so results are bit-identical for any worker count.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::data::{DatasetIndex, KeypointSequence, SilhouetteSequence};
use crate::error::{DataError, TrainError};
use crate::fusion::model_forward;
use crate::loss::{triplet_loss, TripletConfig, TripletStats};
use crate::model::{Binding, ModelBound, ModelConfig, ModelParams};
use crate::par::map_ordered;
use crate::scalar::{lit, Scalar};
use crate::tensor::{backward_seeded, Tensor};

/// Batch geometry: P identities x K sequences, cropped to a fixed length.
#[derive(Debug, Clone)]
pub struct BatchSpec {
    pub identities_per_batch: usize,
    pub seqs_per_identity: usize,
    pub crop_len: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec {
            identities_per_batch: 8,
            seqs_per_identity: 8,
            crop_len: 30,
        }
    }
}

impl BatchSpec {
    pub fn batch_size(&self) -> usize {
        self.identities_per_batch * self.seqs_per_identity
    }

    pub fn validate(&self, clip_len: usize) -> Result<(), TrainError> {
        if self.identities_per_batch < 2 || self.seqs_per_identity < 2 {
            return Err(TrainError::BatchSpec(format!(
                "triplets need P >= 2 and K >= 2, got P={} K={}",
                self.identities_per_batch, self.seqs_per_identity
            )));
        }
        if self.crop_len < clip_len {
            return Err(TrainError::BatchSpec(format!(
                "crop length {} is shorter than clip length {}",
                self.crop_len, clip_len
            )));
        }
        Ok(())
    }
}

/// One loaded training sequence.
pub struct TrainItem {
    pub sil: SilhouetteSequence,
    pub keys: KeypointSequence,
}

/// In-memory training set grouped by identity (sorted identity order).
pub struct TrainSet {
    pub identities: Vec<String>,
    items: Vec<Vec<TrainItem>>,
}

impl TrainSet {
    /// Load every sequence whose index is in `seq_indices` (all conditions,
    /// all views).
    pub fn load(index: &DatasetIndex, seq_indices: &[u32]) -> Result<Self, DataError> {
        let identities = index.identities();
        let mut items: Vec<Vec<TrainItem>> = identities.iter().map(|_| Vec::new()).collect();
        for entry in &index.entries {
            if !seq_indices.contains(&entry.seq_index) {
                continue;
            }
            let (sil, keys) = crate::data::load_sequence(entry)?;
            let slot = identities
                .binary_search(&entry.identity)
                .expect("identity present in index");
            items[slot].push(TrainItem { sil, keys });
        }
        Ok(TrainSet { identities, items })
    }

    pub fn from_items(identities: Vec<String>, items: Vec<Vec<TrainItem>>) -> Self {
        TrainSet { identities, items }
    }

    pub fn identity_count(&self) -> usize {
        self.identities.len()
    }

    pub fn sequences_for(&self, identity: usize) -> &[TrainItem] {
        &self.items[identity]
    }
}

/// One sampled batch element.
#[derive(Debug)]
pub struct BatchItem {
    pub sil: SilhouetteSequence,
    pub keys: KeypointSequence,
    pub identity: String,
    pub label: usize,
}

fn sample_without_replacement(
    rng: &mut ChaCha12Rng,
    pool: usize,
    count: usize,
) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..pool).collect();
    for i in 0..count {
        let j = rng.random_range(i..pool);
        indices.swap(i, j);
    }
    indices.truncate(count);
    indices
}

/// Draw P identities, K sequences each, and crop a contiguous window at a
/// uniformly random start (sequences shorter than the crop wrap around).
pub fn sample_batch(
    set: &TrainSet,
    spec: &BatchSpec,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<BatchItem>, TrainError> {
    let eligible: Vec<usize> = (0..set.identity_count())
        .filter(|&i| set.items[i].len() >= spec.seqs_per_identity)
        .collect();
    if eligible.len() < spec.identities_per_batch {
        return Err(TrainError::BatchSpec(format!(
            "need {} identities with >= {} sequences, dataset has {} (of {} total)",
            spec.identities_per_batch,
            spec.seqs_per_identity,
            eligible.len(),
            set.identity_count()
        )));
    }
    let ids = sample_without_replacement(rng, eligible.len(), spec.identities_per_batch);
    let mut batch = Vec::with_capacity(spec.batch_size());
    for pick in ids {
        let identity_idx = eligible[pick];
        let seqs = &set.items[identity_idx];
        let chosen = sample_without_replacement(rng, seqs.len(), spec.seqs_per_identity);
        for s in chosen {
            let item = &seqs[s];
            let len = item.sil.frame_count();
            let start = if len >= spec.crop_len {
                rng.random_range(0..=len - spec.crop_len)
            } else {
                rng.random_range(0..len)
            };
            batch.push(BatchItem {
                sil: item.sil.crop_looped(start, spec.crop_len),
                keys: item.keys.window(start, spec.crop_len),
                identity: set.identities[identity_idx].clone(),
                label: identity_idx,
            });
        }
    }
    Ok(batch)
}

/// Adaptive-moment optimizer settings.
#[derive(Debug, Clone)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers, aligned with the parameter entries.
pub struct AdamState<T: Scalar> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub steps: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        AdamState {
            m: params.entries().iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.entries().iter().map(|p| vec![T::zero(); p.len()]).collect(),
            steps: 0,
        }
    }

    pub fn apply(
        &mut self,
        params: &mut ModelParams<T>,
        grads: &[Vec<T>],
        cfg: &OptimConfig,
    ) {
        self.steps += 1;
        let b1 = lit::<T>(cfg.beta1);
        let b2 = lit::<T>(cfg.beta2);
        let lr = lit::<T>(cfg.learning_rate);
        let eps = lit::<T>(cfg.eps);
        let corr1 = T::one() - b1.powi(self.steps as i32);
        let corr2 = T::one() - b2.powi(self.steps as i32);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = params.data_mut(i);
            for k in 0..g.len() {
                m[k] = b1 * m[k] + (T::one() - b1) * g[k];
                v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
                let m_hat = m[k] / corr1;
                let v_hat = v[k] / corr2;
                data[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Everything needed to continue training exactly where it stopped.
pub struct TrainState<T: Scalar> {
    pub master_seed: u64,
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
    pub step: u64,
    pub sampler: ChaCha12Rng,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self, TrainError> {
        let params = ModelParams::init(cfg, seed)?;
        let adam = AdamState::new(&params);
        Ok(TrainState {
            master_seed: seed,
            params,
            adam,
            step: 0,
            sampler: crate::seeds::substream(seed, "sampling"),
        })
    }
}

#[derive(Debug, Clone)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub active_fraction: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

impl StepMetrics {
    /// Machine-parsable metrics line: step, loss, active-triplet fraction,
    /// gradient norm, wall time (ms).
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step, self.loss, self.active_fraction, self.grad_norm, self.wall_ms
        )
    }
}

/// One optimization step over a sampled batch.
pub fn train_step<T: Scalar>(
    state: &mut TrainState<T>,
    batch: &[BatchItem],
    model_cfg: &ModelConfig,
    triplet_cfg: &TripletConfig,
    optim_cfg: &OptimConfig,
    workers: usize,
) -> Result<(StepMetrics, TripletStats), TrainError> {
    let start = Instant::now();
    let step = state.step + 1;

    // Phase A: per-item forward graphs.
    type Forward<T> = Result<(Tensor<T>, Binding<T>), TrainError>;
    let forwards: Vec<Forward<T>> = map_ordered(batch, workers, |item| {
        let binding = Binding::new(&state.params, true);
        let bound = ModelBound::from_binding(&binding, model_cfg)?;
        let emb = model_forward(&item.sil, &item.keys, &bound, model_cfg)?;
        Ok((emb, binding))
    });
    let mut embeddings = Vec::with_capacity(batch.len());
    let mut bindings = Vec::with_capacity(batch.len());
    for f in forwards {
        let (e, b) = f?;
        embeddings.push(e);
        bindings.push(b);
    }

    // Phase B: batch loss on re-leafed embeddings.
    let leaves: Vec<Tensor<T>> = embeddings
        .iter()
        .map(|e| Tensor::param(e.shape(), e.to_vec()))
        .collect::<Result<_, _>>()
        .map_err(crate::error::ModelError::from)?;
    let labels: Vec<usize> = batch.iter().map(|b| b.label).collect();
    let (loss, stats) = triplet_loss(&leaves, &labels, triplet_cfg)?;
    let loss_value = loss
        .scalar_value()
        .map_err(crate::error::ModelError::from)?
        .to_f64()
        .unwrap_or(f64::NAN);
    loss.backward().map_err(crate::error::ModelError::from)?;
    let seeds: Vec<Vec<T>> = leaves.iter().map(|l| l.grad_or_zeros()).collect();

    // Phase C: per-item backward, seeded with the loss gradients.
    type NamedGrads<T> = Vec<(String, Vec<T>)>;
    let items: Vec<(Tensor<T>, Binding<T>, Vec<T>)> = embeddings
        .into_iter()
        .zip(bindings)
        .zip(seeds)
        .map(|((e, b), s)| (e, b, s))
        .collect();
    let grad_maps: Vec<Result<NamedGrads<T>, TrainError>> =
        map_ordered(&items, workers, |(emb, binding, seed)| {
            backward_seeded(&[(emb, seed.clone())]).map_err(crate::error::ModelError::from)?;
            Ok(binding.grads())
        });

    // Phase D: fixed-order accumulation and the update.
    let mut total: Vec<Vec<T>> = state
        .params
        .entries()
        .iter()
        .map(|p| vec![T::zero(); p.len()])
        .collect();
    for gm in grad_maps {
        let gm = gm?;
        for (slot, (_, g)) in total.iter_mut().zip(&gm) {
            for (a, b) in slot.iter_mut().zip(g) {
                *a += *b;
            }
        }
    }

    if !loss_value.is_finite() {
        let block = total
            .iter()
            .enumerate()
            .find(|(_, g)| g.iter().any(|v| !v.is_finite()))
            .map(|(i, _)| state.params.entries()[i].name.clone())
            .unwrap_or_else(|| "loss".to_string());
        return Err(TrainError::NonFiniteLoss { step, block });
    }
    for (i, g) in total.iter().enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteLoss {
                step,
                block: state.params.entries()[i].name.clone(),
            });
        }
    }

    let mut norm_sq = 0.0f64;
    for g in &total {
        for v in g {
            let f = v.to_f64().unwrap_or(0.0);
            norm_sq += f * f;
        }
    }

    state.adam.apply(&mut state.params, &total, optim_cfg);
    state.step = step;

    Ok((
        StepMetrics {
            step,
            loss: loss_value,
            active_fraction: stats.active_fraction,
            grad_norm: norm_sq.sqrt(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        },
        stats,
    ))
}

/// Training-loop controls.
pub struct LoopOptions {
    pub steps: u64,
    pub workers: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: u64,
}

/// Run `steps` further optimization steps, streaming metrics lines and
/// writing periodic checkpoints (plus one at the end).
#[allow(clippy::too_many_arguments)]
pub fn train_loop<T: Scalar>(
    state: &mut TrainState<T>,
    set: &TrainSet,
    spec: &BatchSpec,
    model_cfg: &ModelConfig,
    triplet_cfg: &TripletConfig,
    optim_cfg: &OptimConfig,
    opts: &LoopOptions,
    metrics: &mut dyn Write,
) -> Result<Vec<StepMetrics>, TrainError> {
    spec.validate(model_cfg.clip_len)?;
    let mut history = Vec::with_capacity(opts.steps as usize);
    let target = state.step + opts.steps;
    while state.step < target {
        let batch = sample_batch(set, spec, &mut state.sampler)?;
        let (m, _) = train_step(state, &batch, model_cfg, triplet_cfg, optim_cfg, opts.workers)?;
        metrics
            .write_all((m.to_line() + "\n").as_bytes())
            .map_err(|e| TrainError::io("metrics stream", e))?;
        if let Some(dir) = &opts.checkpoint_dir {
            let due = opts.checkpoint_every > 0 && m.step % opts.checkpoint_every == 0;
            if due || m.step == target {
                let ckpt = dir.join(format!("ckpt-{:06}", m.step));
                crate::checkpoint::save(state, &ckpt)?;
            }
        }
        history.push(m);
    }
    Ok(history)
}
