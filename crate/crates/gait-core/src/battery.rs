//! Gradient-check battery: every differentiable operation plus the
//! end-to-end micro model, all verified against central finite differences.
//! Used by the `gradcheck` CLI command and the acceptance suite.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::attention::{ta_apply, ta_weights, TaParams};
use crate::backbone::{glconv_a, glconv_b, spatial_gem, GlBlock};
use crate::data::{Condition, KeypointSequence, SilhouetteSequence, JOINT_COUNT};
use crate::error::TensorError;
use crate::fusion::clip_gem;
use crate::loss::{triplet_loss, TripletConfig};
use crate::model::{micro_config, Binding, ModelBound, ModelParams};
use crate::pose::{pose_forward, PoseBound};
use crate::tensor::{concat, grad_check, Tensor};

type T64 = Tensor<f64>;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub threshold: f64,
    pub millis: u128,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

fn rand_tensor(rng: &mut ChaCha12Rng, shape: &[usize], lo: f64, hi: f64) -> T64 {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    T64::from_vec(shape, data).unwrap()
}

fn sumsq(t: &T64) -> Result<T64, TensorError> {
    Ok(t.mul(t)?.sum_all())
}

/// Deterministic micro sequence pair: pseudo-random binary 8x6 frames and a
/// slowly wobbling valid skeleton. Small enough for finite differences over
/// every model parameter.
pub fn micro_item(rng: &mut ChaCha12Rng, identity: &str, seq: u32, t: usize) -> (SilhouetteSequence, KeypointSequence) {
    let (h, w) = (8usize, 6usize);
    let mut pixels = vec![0u8; t * h * w];
    for px in pixels.iter_mut() {
        if rng.random_range(0.0..1.0) < 0.4 {
            *px = 255;
        }
    }
    let sil = SilhouetteSequence::new(identity.to_string(), Condition::Nm, seq, 90, h, w, pixels)
        .expect("valid micro frame buffer");
    let mut frames = Vec::with_capacity(t);
    let base: [[f64; 2]; JOINT_COUNT] = [
        [3.0, 0.5],
        [2.8, 0.4],
        [3.2, 0.4],
        [2.6, 0.5],
        [3.4, 0.5],
        [2.2, 1.6],
        [3.8, 1.6],
        [1.9, 2.8],
        [4.1, 2.8],
        [1.8, 3.9],
        [4.2, 3.9],
        [2.4, 4.0],
        [3.6, 4.0],
        [2.3, 5.8],
        [3.7, 5.8],
        [2.4, 7.4],
        [3.6, 7.4],
    ];
    for ti in 0..t {
        let dx = 0.3 * (ti as f64 * 0.9).sin();
        let dy = 0.2 * (ti as f64 * 0.7).cos();
        let mut frame = [[0.0f64; 3]; JOINT_COUNT];
        for (slot, b) in frame.iter_mut().zip(base.iter()) {
            slot[0] = b[0] + dx + rng.random_range(-0.05..0.05);
            slot[1] = b[1] + dy + rng.random_range(-0.05..0.05);
            slot[2] = 1.0;
        }
        frames.push(frame);
    }
    (sil, KeypointSequence { frames })
}

fn check<F>(name: &str, threshold: f64, run: F) -> CheckResult
where
    F: FnOnce() -> Result<f64, TensorError>,
{
    let start = Instant::now();
    let max_rel_err = run().unwrap_or(f64::INFINITY);
    CheckResult {
        name: name.to_string(),
        max_rel_err,
        threshold,
        millis: start.elapsed().as_millis(),
    }
}

/// Run the full battery at eps = 1e-4. Per-operation checks use small
/// random fixtures with pinned seeds; the final check runs the whole model
/// and loss on a two-identity micro batch and differentiates every
/// parameter block.
pub fn run_battery() -> Vec<CheckResult> {
    let eps = 1e-4;
    let mut results = Vec::new();

    results.push(check("conv3d_micro", 1e-6, || {
        let mut rng = ChaCha12Rng::seed_from_u64(101);
        let x = rand_tensor(&mut rng, &[1, 2, 4, 4], -1.0, 1.0);
        let k = rand_tensor(&mut rng, &[2, 1, 1, 3, 3], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[2], -0.5, 0.5);
        grad_check(
            |ins| sumsq(&ins[0].conv3d(&ins[1], &ins[2], [0, 1, 1], [1, 1, 1])?),
            &[x, k, b],
            eps,
        )
    }));

    results.push(check("conv3d_pad_stride", 1e-5, || {
        let mut rng = ChaCha12Rng::seed_from_u64(102);
        let x = rand_tensor(&mut rng, &[2, 3, 7, 7], -1.0, 1.0);
        let k = rand_tensor(&mut rng, &[2, 2, 3, 3, 3], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[2], -0.5, 0.5);
        grad_check(
            |ins| sumsq(&ins[0].conv3d(&ins[1], &ins[2], [1, 1, 1], [1, 2, 2])?),
            &[x, k, b],
            eps,
        )
    }));

    results.push(check("linear", 1e-5, || {
        let mut rng = ChaCha12Rng::seed_from_u64(103);
        let x = rand_tensor(&mut rng, &[4, 5], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[5, 3], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[3], -0.5, 0.5);
        grad_check(|ins| sumsq(&ins[0].linear(&ins[1], &ins[2])?), &[x, w, b], eps)
    }));

    results.push(check("matmul", 1e-5, || {
        let mut rng = ChaCha12Rng::seed_from_u64(104);
        let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[4, 2], -1.0, 1.0);
        grad_check(|ins| sumsq(&ins[0].matmul(&ins[1])?), &[a, b], eps)
    }));

    results.push(check("softmax_sumsq", 1e-6, || {
        let mut rng = ChaCha12Rng::seed_from_u64(105);
        let x = rand_tensor(&mut rng, &[5], -2.0, 2.0);
        grad_check(|ins| sumsq(&ins[0].softmax(0)?), &[x], eps)
    }));

    results.push(check("reduce_sum_mean_max", 1e-5, || {
        let mut rng = ChaCha12Rng::seed_from_u64(106);
        let x = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        grad_check(
            |ins| {
                let s = ins[0].sum_axis(0)?;
                let m = ins[0].mean_axis(1)?;
                let mx = ins[0].max_axis(0)?;
                sumsq(&s)?.add(&sumsq(&m)?)?.add(&sumsq(&mx)?)
            },
            &[x],
            eps,
        )
    }));

    results.push(check("concat_slice_reshape_permute", 1e-5, || {
        let mut rng = ChaCha12Rng::seed_from_u64(107);
        let a = rand_tensor(&mut rng, &[2, 3], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[2, 3], -1.0, 1.0);
        grad_check(
            |ins| {
                let joined = concat(&[&ins[0], &ins[1]], 0)?; // [4,3]
                let sliced = joined.slice_axis(0, 1, 4)?; // [3,3]
                let turned = sliced.permute(&[1, 0])?; // [3,3]
                sumsq(&turned.reshape(&[9])?)
            },
            &[a, b],
            eps,
        )
    }));

    results.push(check("elementwise_add_mul_pow", 1e-5, || {
        let mut rng = ChaCha12Rng::seed_from_u64(108);
        let a = rand_tensor(&mut rng, &[6], 0.2, 1.5);
        let b = rand_tensor(&mut rng, &[6], 0.2, 1.5);
        grad_check(
            |ins| {
                let prod = ins[0].mul(&ins[1])?;
                let total = prod.add(&ins[0])?.powf_scalar(1.7);
                Ok(total.sum_all())
            },
            &[a, b],
            eps,
        )
    }));

    results.push(check("sqrt_distance", 1e-5, || {
        let mut rng = ChaCha12Rng::seed_from_u64(109);
        let a = rand_tensor(&mut rng, &[5], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[5], 1.5, 2.5);
        grad_check(
            |ins| {
                let diff = ins[0].sub(&ins[1])?;
                Ok(diff.mul(&diff)?.sum_all().sqrt())
            },
            &[a, b],
            eps,
        )
    }));

    results.push(check("tanh_softplus_clamp", 1e-5, || {
        let mut rng = ChaCha12Rng::seed_from_u64(110);
        let x = rand_tensor(&mut rng, &[7], -2.0, 2.0);
        grad_check(
            |ins| {
                let y = ins[0].tanh().softplus().clamp_min(0.3);
                sumsq(&y)
            },
            &[x],
            eps,
        )
    }));

    results.push(check("max_avg_pool", 1e-5, || {
        let mut rng = ChaCha12Rng::seed_from_u64(111);
        let x = rand_tensor(&mut rng, &[2, 2, 4, 4], -1.0, 1.0);
        grad_check(
            |ins| {
                let mx = ins[0].max_pool_hw(2)?;
                let av = ins[0].avg_pool_hw(2)?;
                sumsq(&mx)?.add(&sumsq(&av)?)
            },
            &[x],
            eps,
        )
    }));

    results.push(check("spatial_gem_p3", 1e-6, || {
        let mut rng = ChaCha12Rng::seed_from_u64(112);
        let x = rand_tensor(&mut rng, &[2, 2, 3, 4], 0.1, 2.0);
        grad_check(
            |ins| {
                let g = spatial_gem(&ins[0], &T64::scalar(3.0)).map_err(wrap)?;
                sumsq(&g)
            },
            &[x],
            eps,
        )
    }));

    results.push(check("clip_gem_learnable_p", 1e-5, || {
        let mut rng = ChaCha12Rng::seed_from_u64(113);
        let x = rand_tensor(&mut rng, &[3, 5], 0.1, 2.0);
        let p = T64::from_vec(&[1], vec![2.5]).unwrap();
        grad_check(
            |ins| {
                let p_scalar = ins[1].reshape(&[])?;
                let g = clip_gem(&ins[0], &p_scalar).map_err(wrap)?;
                sumsq(&g)
            },
            &[x, p],
            eps,
        )
    }));

    results.push(check("ta_weights_apply", 1e-5, || {
        let mut rng = ChaCha12Rng::seed_from_u64(114);
        let clip = rand_tensor(&mut rng, &[4, 8], -1.0, 1.0);
        let w1 = rand_tensor(&mut rng, &[8, 8], -0.5, 0.5);
        let b1 = rand_tensor(&mut rng, &[8], -0.2, 0.2);
        let w2 = rand_tensor(&mut rng, &[8, 1], -0.5, 0.5);
        let b2 = rand_tensor(&mut rng, &[1], -0.2, 0.2);
        grad_check(
            |ins| {
                let params = TaParams {
                    w1: ins[1].clone(),
                    b1: ins[2].clone(),
                    w2: ins[3].clone(),
                    b2: ins[4].clone(),
                };
                let w = ta_weights(&ins[0], &params).map_err(wrap)?;
                sumsq(&ta_apply(&ins[0], &w).map_err(wrap)?)
            },
            &[clip, w1, b1, w2, b2],
            eps,
        )
    }));

    results.push(check("pose_branch", 1e-5, || {
        let mut rng = ChaCha12Rng::seed_from_u64(115);
        let (_, keys) = micro_item(&mut rng, "001", 0, 6);
        let d_p = 6;
        let da = crate::attention::hidden_width(d_p);
        let inputs = vec![
            rand_tensor(&mut rng, &[JOINT_COUNT * 3, d_p], -0.3, 0.3),
            rand_tensor(&mut rng, &[d_p], -0.1, 0.1),
            rand_tensor(&mut rng, &[d_p, d_p], -0.3, 0.3),
            rand_tensor(&mut rng, &[d_p], -0.1, 0.1),
            rand_tensor(&mut rng, &[d_p, da], -0.3, 0.3),
            rand_tensor(&mut rng, &[da], -0.1, 0.1),
            rand_tensor(&mut rng, &[da, 1], -0.3, 0.3),
            rand_tensor(&mut rng, &[1], -0.1, 0.1),
        ];
        grad_check(
            |ins| {
                let bound = PoseBound {
                    enc1_weight: ins[0].clone(),
                    enc1_bias: ins[1].clone(),
                    enc2_weight: ins[2].clone(),
                    enc2_bias: ins[3].clone(),
                    ta: TaParams {
                        w1: ins[4].clone(),
                        b1: ins[5].clone(),
                        w2: ins[6].clone(),
                        b2: ins[7].clone(),
                    },
                };
                sumsq(&pose_forward(&keys, &bound, 3).map_err(wrap)?)
            },
            &inputs,
            eps,
        )
    }));

    results.push(check("glconv_a_b", 1e-5, || {
        let mut rng = ChaCha12Rng::seed_from_u64(116);
        let x = rand_tensor(&mut rng, &[2, 2, 4, 4], -1.0, 1.0);
        let inputs = vec![
            x,
            rand_tensor(&mut rng, &[2, 2, 1, 3, 3], -0.5, 0.5),
            rand_tensor(&mut rng, &[2], -0.2, 0.2),
            rand_tensor(&mut rng, &[2, 2, 1, 3, 3], -0.5, 0.5),
            rand_tensor(&mut rng, &[2], -0.2, 0.2),
        ];
        grad_check(
            |ins| {
                let blk = GlBlock {
                    global_kernel: ins[1].clone(),
                    global_bias: ins[2].clone(),
                    local_kernel: ins[3].clone(),
                    local_bias: ins[4].clone(),
                };
                let a = glconv_a(&ins[0], &blk, 2).map_err(wrap)?;
                let b = glconv_b(&ins[0], &blk, 2).map_err(wrap)?;
                sumsq(&a)?.add(&sumsq(&b)?)
            },
            &inputs,
            eps,
        )
    }));

    results.push(check("triplet_loss_embeddings", 1e-5, || {
        let mut rng = ChaCha12Rng::seed_from_u64(117);
        let mut sets = Vec::new();
        let mut ids = Vec::new();
        for pi in 0..2usize {
            for _ in 0..2usize {
                let offset = pi as f64;
                let data: Vec<f64> = (0..2 * 4).map(|_| offset + rng.random_range(-0.3..0.3)).collect();
                sets.push(T64::from_vec(&[2, 4], data).unwrap());
                ids.push(pi);
            }
        }
        let cfg = TripletConfig { margin: 3.0 };
        let ids2 = ids.clone();
        grad_check(
            |ins| {
                let (loss, _) = triplet_loss(ins, &ids2, &cfg).map_err(wrap)?;
                Ok(loss)
            },
            &sets,
            eps,
        )
    }));

    results.push(check("full_model_micro", 1e-5, || {
        full_model_micro_check(eps)
    }));

    results
}

fn wrap(e: crate::error::ModelError) -> TensorError {
    TensorError::invalid("battery", e.to_string())
}

/// End-to-end check: four micro sequences (two identities), full forward
/// plus triplet loss, differentiated against every parameter block.
fn full_model_micro_check(eps: f64) -> Result<f64, TensorError> {
    let cfg = micro_config();
    let params = ModelParams::<f64>::init(&cfg, 20260809).map_err(wrap)?;
    let mut rng = ChaCha12Rng::seed_from_u64(118);
    let mut items = Vec::new();
    let mut ids = Vec::new();
    for pi in 0..2usize {
        for seq in 0..2u32 {
            items.push(micro_item(&mut rng, &format!("{:03}", pi + 1), seq, 4));
            ids.push(pi);
        }
    }
    let names: Vec<String> = params.entries().iter().map(|p| p.name.clone()).collect();
    let inputs: Vec<T64> = params
        .entries()
        .iter()
        .map(|p| T64::from_vec(&p.shape, p.data.as_ref().clone()).unwrap())
        .collect();
    let loss_cfg = TripletConfig { margin: 0.3 };
    grad_check(
        |ins| {
            let binding = Binding::from_tensors(&names, ins);
            let bound = ModelBound::from_binding(&binding, &cfg).map_err(wrap)?;
            let mut embeddings = Vec::new();
            for (sil, keys) in &items {
                embeddings.push(crate::fusion::model_forward(sil, keys, &bound, &cfg).map_err(wrap)?);
            }
            let (loss, _) = triplet_loss(&embeddings, &ids, &loss_cfg).map_err(wrap)?;
            Ok(loss)
        },
        &inputs,
        eps,
    )
}

/// One line per check, like the CLI prints.
pub fn render_results(results: &[CheckResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "{:32} max_rel_err {:>12.3e}  threshold {:>8.0e}  {:>6} ms  {}\n",
            r.name,
            r.max_rel_err,
            r.threshold,
            r.millis,
            if r.passed() { "PASS" } else { "FAIL" },
        ));
    }
    out
}
