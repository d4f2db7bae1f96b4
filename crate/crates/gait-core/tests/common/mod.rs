//! Shared test oracles: deliberately naive reference implementations,
//! written first and kept independent of the library's kernels.

#![allow(dead_code)] // each test target uses a subset of these helpers

use gait_core::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

pub fn rand_vec(rng: &mut ChaCha12Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn rand_tensor(rng: &mut ChaCha12Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, rand_vec(rng, n, lo, hi)).unwrap()
}

/// Textbook direct-summation 3-D correlation with zero padding. Every
/// output coordinate loops over the whole kernel and checks bounds against
/// the unpadded input explicitly.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_oracle(
    input: &[f64],
    in_shape: [usize; 4],
    kernel: &[f64],
    k_shape: [usize; 5],
    bias: &[f64],
    pad: [usize; 3],
    stride: [usize; 3],
) -> (Vec<f64>, [usize; 4]) {
    let [c_in, it, ih, iw] = in_shape;
    let [c_out, kc, kt, kh, kw] = k_shape;
    assert_eq!(c_in, kc);
    let ot = (it + 2 * pad[0] - kt) / stride[0] + 1;
    let oh = (ih + 2 * pad[1] - kh) / stride[1] + 1;
    let ow = (iw + 2 * pad[2] - kw) / stride[2] + 1;
    let mut out = vec![0.0; c_out * ot * oh * ow];
    for co in 0..c_out {
        for a in 0..ot {
            for b in 0..oh {
                for c in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for dt in 0..kt {
                            for dh in 0..kh {
                                for dw in 0..kw {
                                    let t = (a * stride[0] + dt) as isize - pad[0] as isize;
                                    let h = (b * stride[1] + dh) as isize - pad[1] as isize;
                                    let w = (c * stride[2] + dw) as isize - pad[2] as isize;
                                    if t < 0
                                        || h < 0
                                        || w < 0
                                        || t >= it as isize
                                        || h >= ih as isize
                                        || w >= iw as isize
                                    {
                                        continue;
                                    }
                                    let iv = input[((ci * it + t as usize) * ih + h as usize) * iw
                                        + w as usize];
                                    let kv = kernel
                                        [(((co * c_in + ci) * kt + dt) * kh + dh) * kw + dw];
                                    acc += iv * kv;
                                }
                            }
                        }
                    }
                    out[((co * ot + a) * oh + b) * ow + c] = acc + bias[co];
                }
            }
        }
    }
    (out, [c_out, ot, oh, ow])
}

/// Naive triple-loop matrix product.
pub fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// One random conv3d case description.
pub struct ConvCase {
    pub in_shape: [usize; 4],
    pub k_shape: [usize; 5],
    pub pad: [usize; 3],
    pub stride: [usize; 3],
}

/// Draw a random valid conv3d configuration with inputs up to 4 channels
/// and 8x8x8 volumes.
pub fn random_conv_case(rng: &mut ChaCha12Rng) -> ConvCase {
    loop {
        let c_in = rng.random_range(1..=4);
        let c_out = rng.random_range(1..=4);
        let it = rng.random_range(1..=8);
        let ih = rng.random_range(1..=8);
        let iw = rng.random_range(1..=8);
        let kt = rng.random_range(1..=3);
        let kh = rng.random_range(1..=3);
        let kw = rng.random_range(1..=3);
        let pad = [
            rng.random_range(0..=1),
            rng.random_range(0..=1),
            rng.random_range(0..=1),
        ];
        let stride = [
            rng.random_range(1..=2),
            rng.random_range(1..=2),
            rng.random_range(1..=2),
        ];
        let ins = [it, ih, iw];
        let ks = [kt, kh, kw];
        let ok = (0..3).all(|a| {
            let padded = ins[a] + 2 * pad[a];
            padded >= ks[a] && (padded - ks[a]) % stride[a] == 0
        });
        if ok {
            return ConvCase {
                in_shape: [c_in, it, ih, iw],
                k_shape: [c_out, c_in, kt, kh, kw],
                pad,
                stride,
            };
        }
    }
}
