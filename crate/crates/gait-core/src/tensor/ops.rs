//! Forward kernels and their backward rules.
//!
//! Convolution follows the deep-learning convention: correlation, no kernel
//! flip, zero padding. Reductions accumulate in ascending index order so
//! results are bit-reproducible across runs and worker counts.

use std::sync::Arc;

use crate::error::TensorError;
use crate::scalar::{lit, Scalar};

use super::{strides, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<(), TensorError> {
    if axis >= rank {
        return Err(TensorError::InvalidAxis { op, axis, rank });
    }
    Ok(())
}

fn check_same_shape<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        check_same_shape("add", self, other)?;
        let out = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| *a + *b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            |g| vec![Some(g.to_vec()), Some(g.to_vec())],
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        check_same_shape("sub", self, other)?;
        let out = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| *a - *b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            |g| {
                vec![
                    Some(g.to_vec()),
                    Some(g.iter().map(|v| -*v).collect()),
                ]
            },
        ))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        check_same_shape("mul", self, other)?;
        let out = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| *a * *b)
            .collect();
        let a = self.data_arc();
        let b = other.data_arc();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            move |g| {
                let da = g.iter().zip(b.iter()).map(|(g, b)| *g * *b).collect();
                let db = g.iter().zip(a.iter()).map(|(g, a)| *g * *a).collect();
                vec![Some(da), Some(db)]
            },
        ))
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        let out = self.data().iter().map(|v| *v * c).collect();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|v| *v * c).collect())]
        })
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let out = self.data().iter().map(|v| *v + c).collect();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        })
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-T::one())
    }

    /// Elementwise x^p for a fixed exponent.
    pub fn powf_scalar(&self, p: T) -> Tensor<T> {
        let out = self.data().iter().map(|v| v.powf(p)).collect();
        let x = self.data_arc();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g| {
            let dx = g
                .iter()
                .zip(x.iter())
                .map(|(g, x)| *g * p * x.powf(p - T::one()))
                .collect();
            vec![Some(dx)]
        })
    }

    /// Elementwise x^p where the exponent is a scalar tensor (so GeM
    /// exponents can be learned). Callers must keep x strictly positive.
    pub fn pow_t(&self, p: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let pv = p.scalar_value()?;
        let out: Vec<T> = self.data().iter().map(|v| v.powf(pv)).collect();
        let x = self.data_arc();
        let y = Arc::new(out.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), p.clone()],
            move |g| {
                let dx = g
                    .iter()
                    .zip(x.iter())
                    .map(|(g, x)| *g * pv * x.powf(pv - T::one()))
                    .collect();
                let mut dp = T::zero();
                for ((g, x), y) in g.iter().zip(x.iter()).zip(y.iter()) {
                    dp += *g * *y * x.ln();
                }
                vec![Some(dx), Some(vec![dp])]
            },
        ))
    }

    pub fn recip(&self) -> Tensor<T> {
        let out = self.data().iter().map(|v| T::one() / *v).collect();
        let x = self.data_arc();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g| {
            let dx = g
                .iter()
                .zip(x.iter())
                .map(|(g, x)| -*g / (*x * *x))
                .collect();
            vec![Some(dx)]
        })
    }

    /// Elementwise square root. The derivative is floored near zero so the
    /// subgradient at the origin stays finite (0 * finite = 0 instead of NaN).
    pub fn sqrt(&self) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|v| v.sqrt()).collect();
        let y = Arc::new(out.clone());
        let half = lit::<T>(0.5);
        let floor = lit::<T>(1e-12);
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g| {
            let dx = g
                .iter()
                .zip(y.iter())
                .map(|(g, y)| *g * half / (*y).max(floor))
                .collect();
            vec![Some(dx)]
        })
    }

    pub fn tanh(&self) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|v| v.tanh()).collect();
        let y = Arc::new(out.clone());
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g| {
            let dx = g
                .iter()
                .zip(y.iter())
                .map(|(g, y)| *g * (T::one() - *y * *y))
                .collect();
            vec![Some(dx)]
        })
    }

    /// Numerically stable ln(1 + e^x).
    pub fn softplus(&self) -> Tensor<T> {
        let out = self
            .data()
            .iter()
            .map(|&x| x.max(T::zero()) + (-x.abs()).exp().ln_1p())
            .collect();
        let x = self.data_arc();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g| {
            let dx = g
                .iter()
                .zip(x.iter())
                .map(|(g, &x)| {
                    let s = if x >= T::zero() {
                        T::one() / (T::one() + (-x).exp())
                    } else {
                        let e = x.exp();
                        e / (T::one() + e)
                    };
                    *g * s
                })
                .collect();
            vec![Some(dx)]
        })
    }

    pub fn clamp_min(&self, c: T) -> Tensor<T> {
        let out = self.data().iter().map(|v| (*v).max(c)).collect();
        let x = self.data_arc();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g| {
            let dx = g
                .iter()
                .zip(x.iter())
                .map(|(g, x)| if *x > c { *g } else { T::zero() })
                .collect();
            vec![Some(dx)]
        })
    }

    pub fn relu(&self) -> Tensor<T> {
        self.clamp_min(T::zero())
    }

    /// 2-D matrix product: [m, k] x [k, n] -> [m, n].
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        if self.rank() != 2 || other.rank() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = other.shape()[1];
        let a = self.data();
        let b = other.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                let brow = &b[p * n..(p + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * *bv;
                }
            }
        }
        let a = self.data_arc();
        let b = other.data_arc();
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            move |g| {
                // da[i,p] = sum_j g[i,j] b[p,j]
                let mut da = vec![T::zero(); m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    let darow = &mut da[i * k..(i + 1) * k];
                    for p in 0..k {
                        let brow = &b[p * n..(p + 1) * n];
                        let mut acc = T::zero();
                        for (gv, bv) in grow.iter().zip(brow) {
                            acc += *gv * *bv;
                        }
                        darow[p] = acc;
                    }
                }
                // db[p,j] = sum_i a[i,p] g[i,j]
                let mut db = vec![T::zero(); k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = a[i * k + p];
                        let dbrow = &mut db[p * n..(p + 1) * n];
                        for (d, gv) in dbrow.iter_mut().zip(grow) {
                            *d += av * *gv;
                        }
                    }
                }
                vec![Some(da), Some(db)]
            },
        ))
    }

    /// Affine map per row: [n, d_in] x [d_in, d_out] + [d_out].
    pub fn linear(&self, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        if self.rank() != 2 || weight.rank() != 2 || self.shape()[1] != weight.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        let (n, d_in) = (self.shape()[0], self.shape()[1]);
        let d_out = weight.shape()[1];
        if bias.shape() != [d_out] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: weight.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let x = self.data();
        let w = weight.data();
        let b = bias.data();
        let mut out = vec![T::zero(); n * d_out];
        for i in 0..n {
            let orow = &mut out[i * d_out..(i + 1) * d_out];
            orow.copy_from_slice(b);
            for k in 0..d_in {
                let xv = x[i * d_in + k];
                let wrow = &w[k * d_out..(k + 1) * d_out];
                for (o, wv) in orow.iter_mut().zip(wrow) {
                    *o += xv * *wv;
                }
            }
        }
        let x = self.data_arc();
        let w = weight.data_arc();
        Ok(Tensor::from_op(
            vec![n, d_out],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            move |g| {
                let mut dx = vec![T::zero(); n * d_in];
                let mut dw = vec![T::zero(); d_in * d_out];
                let mut db = vec![T::zero(); d_out];
                for i in 0..n {
                    let grow = &g[i * d_out..(i + 1) * d_out];
                    for (d, gv) in db.iter_mut().zip(grow) {
                        *d += *gv;
                    }
                    let dxrow = &mut dx[i * d_in..(i + 1) * d_in];
                    for k in 0..d_in {
                        let wrow = &w[k * d_out..(k + 1) * d_out];
                        let mut acc = T::zero();
                        for (gv, wv) in grow.iter().zip(wrow) {
                            acc += *gv * *wv;
                        }
                        dxrow[k] = acc;
                        let xv = x[i * d_in + k];
                        let dwrow = &mut dw[k * d_out..(k + 1) * d_out];
                        for (d, gv) in dwrow.iter_mut().zip(grow) {
                            *d += xv * *gv;
                        }
                    }
                }
                vec![Some(dx), Some(dw), Some(db)]
            },
        ))
    }

    /// Numerically stabilized softmax along one axis.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>, TensorError> {
        check_axis("softmax", axis, self.rank())?;
        let shape = self.shape().to_vec();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut mx = x[base];
                for a in 1..n {
                    mx = mx.max(x[base + a * inner]);
                }
                let mut sum = T::zero();
                for a in 0..n {
                    let e = (x[base + a * inner] - mx).exp();
                    out[base + a * inner] = e;
                    sum += e;
                }
                for a in 0..n {
                    out[base + a * inner] /= sum;
                }
            }
        }
        let y = Arc::new(out.clone());
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone()],
            move |g| {
                let mut dx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let mut s = T::zero();
                        for a in 0..n {
                            let idx = base + a * inner;
                            s += g[idx] * y[idx];
                        }
                        for a in 0..n {
                            let idx = base + a * inner;
                            dx[idx] = y[idx] * (g[idx] - s);
                        }
                    }
                }
                vec![Some(dx)]
            },
        ))
    }

    /// Reduce along one axis (the axis is removed from the shape).
    pub fn reduce(&self, axis: usize, kind: ReduceKind) -> Result<Tensor<T>, TensorError> {
        check_axis("reduce", axis, self.rank())?;
        let shape = self.shape();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut out_shape: Vec<usize> = shape.to_vec();
        out_shape.remove(axis);
        let x = self.data();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                // Mean accumulates x * (1/n) term by term; with uniform
                // attention weights this makes weighted sums and means
                // bit-identical (same multiplies, same addition order).
                let w = if kind == ReduceKind::Mean {
                    T::one() / T::from_usize(n).unwrap()
                } else {
                    T::one()
                };
                let mut out = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for a in 0..n {
                        let base = o * n * inner + a * inner;
                        let orow = &mut out[o * inner..(o + 1) * inner];
                        for (ov, xv) in orow.iter_mut().zip(&x[base..base + inner]) {
                            *ov += *xv * w;
                        }
                    }
                }
                Ok(Tensor::from_op(
                    out_shape,
                    out,
                    vec![self.clone()],
                    move |g| {
                        let mut dx = vec![T::zero(); outer * n * inner];
                        for o in 0..outer {
                            let grow = &g[o * inner..(o + 1) * inner];
                            for a in 0..n {
                                let base = o * n * inner + a * inner;
                                for (d, gv) in dx[base..base + inner].iter_mut().zip(grow) {
                                    *d = *gv * w;
                                }
                            }
                        }
                        vec![Some(dx)]
                    },
                ))
            }
            ReduceKind::Max => {
                let mut out = vec![T::zero(); outer * inner];
                let mut arg = vec![0usize; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = x[o * n * inner + i];
                        let mut best_idx = o * n * inner + i;
                        for a in 1..n {
                            let idx = o * n * inner + a * inner + i;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                        out[o * inner + i] = best;
                        arg[o * inner + i] = best_idx;
                    }
                }
                let total = x.len();
                Ok(Tensor::from_op(
                    out_shape,
                    out,
                    vec![self.clone()],
                    move |g| {
                        let mut dx = vec![T::zero(); total];
                        for (gv, idx) in g.iter().zip(&arg) {
                            dx[*idx] += *gv;
                        }
                        vec![Some(dx)]
                    },
                ))
            }
        }
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>, TensorError> {
        self.reduce(axis, ReduceKind::Sum)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<T>, TensorError> {
        self.reduce(axis, ReduceKind::Mean)
    }

    pub fn max_axis(&self, axis: usize) -> Result<Tensor<T>, TensorError> {
        self.reduce(axis, ReduceKind::Max)
    }

    /// Sum of every element, as a rank-0 scalar.
    pub fn sum_all(&self) -> Tensor<T> {
        let mut acc = T::zero();
        for v in self.data() {
            acc += *v;
        }
        let n = self.len();
        Tensor::from_op(vec![], vec![acc], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<T>, TensorError> {
        let expect: usize = new_shape.iter().product();
        if expect != self.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: new_shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            new_shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            |g| vec![Some(g.to_vec())],
        ))
    }

    /// Permute axes; `perm[i]` names the source axis placed at position `i`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>, TensorError> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::invalid(
                "permute",
                format!("invalid permutation {:?} for rank {}", perm, rank),
            ));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let in_strides = strides(&in_shape);
        let out_len = self.len();
        let x = self.data();
        let mut out = vec![T::zero(); out_len];
        // Walk output indices in order; map each to its source offset.
        let mut idx = vec![0usize; rank];
        for ov in out.iter_mut() {
            let mut src = 0usize;
            for (i, &p) in perm.iter().enumerate() {
                src += idx[i] * in_strides[p];
            }
            *ov = x[src];
            for i in (0..rank).rev() {
                idx[i] += 1;
                if idx[i] < out_shape[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        let perm_owned = perm.to_vec();
        let out_shape_b = out_shape.clone();
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            move |g| {
                let mut dx = vec![T::zero(); out_len];
                let mut idx = vec![0usize; rank];
                for gv in g.iter() {
                    let mut src = 0usize;
                    for (i, &p) in perm_owned.iter().enumerate() {
                        src += idx[i] * in_strides[p];
                    }
                    dx[src] = *gv;
                    for i in (0..rank).rev() {
                        idx[i] += 1;
                        if idx[i] < out_shape_b[i] {
                            break;
                        }
                        idx[i] = 0;
                    }
                }
                vec![Some(dx)]
            },
        ))
    }

    /// Slice `[start, end)` along one axis.
    pub fn slice_axis(
        &self,
        axis: usize,
        start: usize,
        end: usize,
    ) -> Result<Tensor<T>, TensorError> {
        check_axis("slice", axis, self.rank())?;
        let shape = self.shape();
        if start >= end || end > shape[axis] {
            return Err(TensorError::invalid(
                "slice",
                format!(
                    "range {}..{} invalid for axis {} of extent {}",
                    start, end, axis, shape[axis]
                ),
            ));
        }
        let n = shape[axis];
        let keep = end - start;
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[axis] = keep;
        let x = self.data();
        let mut out = vec![T::zero(); outer * keep * inner];
        for o in 0..outer {
            let src = o * n * inner + start * inner;
            let dst = o * keep * inner;
            out[dst..dst + keep * inner].copy_from_slice(&x[src..src + keep * inner]);
        }
        let total = x.len();
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            move |g| {
                let mut dx = vec![T::zero(); total];
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    let src = o * keep * inner;
                    dx[dst..dst + keep * inner].copy_from_slice(&g[src..src + keep * inner]);
                }
                vec![Some(dx)]
            },
        ))
    }

    /// Max pooling over the last two axes of a rank-4 tensor, window k,
    /// stride k. Trailing rows/columns that do not fill a window are dropped.
    pub fn max_pool_hw(&self, k: usize) -> Result<Tensor<T>, TensorError> {
        if self.rank() != 4 {
            return Err(TensorError::invalid(
                "max_pool_hw",
                format!("expected rank-4 input, got shape {:?}", self.shape()),
            ));
        }
        if k == 0 {
            return Err(TensorError::invalid("max_pool_hw", "window must be >= 1"));
        }
        let (c, t, h, w) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        let (oh, ow) = (h / k, w / k);
        if oh == 0 || ow == 0 {
            return Err(TensorError::invalid(
                "max_pool_hw",
                format!("window {} larger than spatial extents {}x{}", k, h, w),
            ));
        }
        let x = self.data();
        let mut out = vec![T::zero(); c * t * oh * ow];
        let mut arg = vec![0usize; out.len()];
        for ct in 0..c * t {
            let plane = ct * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = x[plane + (i * k) * w + j * k];
                    let mut best_idx = plane + (i * k) * w + j * k;
                    for di in 0..k {
                        for dj in 0..k {
                            let idx = plane + (i * k + di) * w + (j * k + dj);
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ct * oh * ow + i * ow + j;
                    out[o] = best;
                    arg[o] = best_idx;
                }
            }
        }
        let total = x.len();
        Ok(Tensor::from_op(
            vec![c, t, oh, ow],
            out,
            vec![self.clone()],
            move |g| {
                let mut dx = vec![T::zero(); total];
                for (gv, idx) in g.iter().zip(&arg) {
                    dx[*idx] += *gv;
                }
                vec![Some(dx)]
            },
        ))
    }

    /// Average pooling over the last two axes of a rank-4 tensor, window k,
    /// stride k. Requires both spatial extents divisible by k.
    pub fn avg_pool_hw(&self, k: usize) -> Result<Tensor<T>, TensorError> {
        if self.rank() != 4 {
            return Err(TensorError::invalid(
                "avg_pool_hw",
                format!("expected rank-4 input, got shape {:?}", self.shape()),
            ));
        }
        let (c, t, h, w) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(TensorError::invalid(
                "avg_pool_hw",
                format!("spatial extents {}x{} not divisible by window {}", h, w, k),
            ));
        }
        let (oh, ow) = (h / k, w / k);
        let inv = T::one() / T::from_usize(k * k).unwrap();
        let x = self.data();
        let mut out = vec![T::zero(); c * t * oh * ow];
        for ct in 0..c * t {
            let plane = ct * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = T::zero();
                    for di in 0..k {
                        for dj in 0..k {
                            acc += x[plane + (i * k + di) * w + (j * k + dj)];
                        }
                    }
                    out[ct * oh * ow + i * ow + j] = acc * inv;
                }
            }
        }
        let total = x.len();
        Ok(Tensor::from_op(
            vec![c, t, oh, ow],
            out,
            vec![self.clone()],
            move |g| {
                let mut dx = vec![T::zero(); total];
                for ct in 0..c * t {
                    let plane = ct * h * w;
                    for i in 0..oh {
                        for j in 0..ow {
                            let gv = g[ct * oh * ow + i * ow + j] * inv;
                            for di in 0..k {
                                for dj in 0..k {
                                    dx[plane + (i * k + di) * w + (j * k + dj)] = gv;
                                }
                            }
                        }
                    }
                }
                vec![Some(dx)]
            },
        ))
    }

    /// Direct 3-D correlation with zero padding.
    ///
    /// input: [c_in, T, h, w]; kernel: [c_out, c_in, k_t, k_h, k_w];
    /// bias: [c_out]; output: [c_out, T', h', w'] with
    /// T' = (T + 2*pad_t - k_t)/stride_t + 1 (and likewise for h', w').
    pub fn conv3d(
        &self,
        kernel: &Tensor<T>,
        bias: &Tensor<T>,
        pad: [usize; 3],
        stride: [usize; 3],
    ) -> Result<Tensor<T>, TensorError> {
        if self.rank() != 4 || kernel.rank() != 5 {
            return Err(TensorError::ShapeMismatch {
                op: "conv3d",
                lhs: self.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        let (c_in, it, ih, iw) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        let (c_out, kc, kt, kh, kw) = (
            kernel.shape()[0],
            kernel.shape()[1],
            kernel.shape()[2],
            kernel.shape()[3],
            kernel.shape()[4],
        );
        if kc != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv3d",
                lhs: self.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        if bias.shape() != [c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv3d",
                lhs: kernel.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        if stride.contains(&0) {
            return Err(TensorError::invalid("conv3d", "stride must be positive"));
        }
        let ins = [it, ih, iw];
        let ks = [kt, kh, kw];
        let mut outs = [0usize; 3];
        for a in 0..3 {
            let padded = ins[a] + 2 * pad[a];
            if ks[a] > padded {
                return Err(TensorError::invalid(
                    "conv3d",
                    format!(
                        "kernel extent {} exceeds padded input extent {} on axis {} \
                         (input {:?}, kernel {:?})",
                        ks[a],
                        padded,
                        a,
                        self.shape(),
                        kernel.shape()
                    ),
                ));
            }
            let span = padded - ks[a];
            if !span.is_multiple_of(stride[a]) {
                return Err(TensorError::NonIntegerOutput {
                    axis: a,
                    input: ins[a],
                    pad: pad[a],
                    kernel: ks[a],
                    stride: stride[a],
                });
            }
            outs[a] = span / stride[a] + 1;
        }
        let (ot, oh, ow) = (outs[0], outs[1], outs[2]);
        let x = self.data();
        let k = kernel.data();
        let b = bias.data();

        let mut out = vec![T::zero(); c_out * ot * oh * ow];
        for co in 0..c_out {
            let bv = b[co];
            for a in 0..ot {
                for bb in 0..oh {
                    let orow =
                        &mut out[((co * ot + a) * oh + bb) * ow..((co * ot + a) * oh + bb) * ow + ow];
                    for v in orow.iter_mut() {
                        *v = bv;
                    }
                    for ci in 0..c_in {
                        for dt in 0..kt {
                            let t = (a * stride[0] + dt) as isize - pad[0] as isize;
                            if t < 0 || t >= it as isize {
                                continue;
                            }
                            for dh in 0..kh {
                                let hh = (bb * stride[1] + dh) as isize - pad[1] as isize;
                                if hh < 0 || hh >= ih as isize {
                                    continue;
                                }
                                let irow_base = ((ci * it + t as usize) * ih + hh as usize) * iw;
                                let irow = &x[irow_base..irow_base + iw];
                                let kbase = (((co * c_in + ci) * kt + dt) * kh + dh) * kw;
                                for dw in 0..kw {
                                    let kval = k[kbase + dw];
                                    let shift = dw as isize - pad[2] as isize;
                                    let lo = if shift >= 0 {
                                        0
                                    } else {
                                        ((-shift) as usize).div_ceil(stride[2])
                                    };
                                    let hi_num = iw as isize - shift;
                                    if hi_num <= 0 {
                                        continue;
                                    }
                                    let hi = ((hi_num as usize - 1) / stride[2] + 1).min(ow);
                                    if stride[2] == 1 {
                                        for c in lo..hi {
                                            orow[c] +=
                                                kval * irow[(c as isize + shift) as usize];
                                        }
                                    } else {
                                        for c in lo..hi {
                                            orow[c] += kval
                                                * irow[(c * stride[2])
                                                    .wrapping_add_signed(shift)];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }

        let x_arc = self.data_arc();
        let k_arc = kernel.data_arc();
        let in_shape = [c_in, it, ih, iw];
        let k_shape = [c_out, c_in, kt, kh, kw];
        Ok(Tensor::from_op(
            vec![c_out, ot, oh, ow],
            out,
            vec![self.clone(), kernel.clone(), bias.clone()],
            #[allow(clippy::needless_range_loop)]
            move |g| {
                let [c_in, it, ih, iw] = in_shape;
                let [c_out, _, kt, kh, kw] = k_shape;
                let mut dx = vec![T::zero(); c_in * it * ih * iw];
                let mut dk = vec![T::zero(); k_arc.len()];
                let mut db = vec![T::zero(); c_out];
                for co in 0..c_out {
                    let mut bacc = T::zero();
                    for a in 0..ot {
                        for bb in 0..oh {
                            let grow_base = ((co * ot + a) * oh + bb) * ow;
                            let grow = &g[grow_base..grow_base + ow];
                            for gv in grow {
                                bacc += *gv;
                            }
                            for ci in 0..c_in {
                                for dt in 0..kt {
                                    let t = (a * stride[0] + dt) as isize - pad[0] as isize;
                                    if t < 0 || t >= it as isize {
                                        continue;
                                    }
                                    for dh in 0..kh {
                                        let hh =
                                            (bb * stride[1] + dh) as isize - pad[1] as isize;
                                        if hh < 0 || hh >= ih as isize {
                                            continue;
                                        }
                                        let irow_base =
                                            ((ci * it + t as usize) * ih + hh as usize) * iw;
                                        let kbase =
                                            (((co * c_in + ci) * kt + dt) * kh + dh) * kw;
                                        for dw in 0..kw {
                                            let kval = k_arc[kbase + dw];
                                            let shift = dw as isize - pad[2] as isize;
                                            let lo = if shift >= 0 {
                                                0
                                            } else {
                                                ((-shift) as usize).div_ceil(stride[2])
                                            };
                                            let hi_num = iw as isize - shift;
                                            if hi_num <= 0 {
                                                continue;
                                            }
                                            let hi =
                                                ((hi_num as usize - 1) / stride[2] + 1).min(ow);
                                            let mut kacc = T::zero();
                                            for c in lo..hi {
                                                let ic = (c * stride[2]) as isize + shift;
                                                let idx = irow_base + ic as usize;
                                                dx[idx] += kval * grow[c];
                                                kacc += x_arc[idx] * grow[c];
                                            }
                                            dk[kbase + dw] += kacc;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    db[co] = bacc;
                }
                vec![Some(dx), Some(dk), Some(db)]
            },
        ))
    }
}

/// Concatenate along an axis; all other extents must agree.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>, TensorError> {
    if parts.is_empty() {
        return Err(TensorError::invalid("concat", "no tensors given"));
    }
    let rank = parts[0].rank();
    check_axis("concat", axis, rank)?;
    for p in parts {
        if p.rank() != rank {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: parts[0].shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        for (ax, (a, b)) in parts[0].shape().iter().zip(p.shape()).enumerate() {
            if ax != axis && a != b {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
    }
    let mut out_shape = parts[0].shape().to_vec();
    out_shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let outer: usize = out_shape[..axis].iter().product();
    let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total_axis = out_shape[axis];

    let mut out = vec![T::zero(); outer * total_axis * inner];
    for o in 0..outer {
        let mut off = 0usize;
        for (p, &ext) in parts.iter().zip(&extents) {
            let src = o * ext * inner;
            let dst = o * total_axis * inner + off * inner;
            out[dst..dst + ext * inner].copy_from_slice(&p.data()[src..src + ext * inner]);
            off += ext;
        }
    }
    let parents: Vec<Tensor<T>> = parts.iter().map(|p| (*p).clone()).collect();
    let extents_b = extents.clone();
    Ok(Tensor::from_op(out_shape, out, parents, move |g| {
        let mut grads: Vec<Option<Vec<T>>> = extents_b
            .iter()
            .map(|&ext| Some(vec![T::zero(); outer * ext * inner]))
            .collect();
        for o in 0..outer {
            let mut off = 0usize;
            for (gi, &ext) in grads.iter_mut().zip(&extents_b) {
                let dst = o * ext * inner;
                let src = o * total_axis * inner + off * inner;
                gi.as_mut().unwrap()[dst..dst + ext * inner]
                    .copy_from_slice(&g[src..src + ext * inner]);
                off += ext;
            }
        }
        grads
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    type T64 = Tensor<f64>;

    fn t(shape: &[usize], data: Vec<f64>) -> T64 {
        T64::from_vec(shape, data).unwrap()
    }

    // conv3d examples

    #[test]
    fn conv3d_scaling_kernel_doubles_ones() {
        let input = T64::ones(&[1, 3, 3, 3]);
        let kernel = t(&[1, 1, 1, 1, 1], vec![2.0]);
        let bias = T64::zeros(&[1]);
        let out = input.conv3d(&kernel, &bias, [0, 0, 0], [1, 1, 1]).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv3d_full_window_sums_elements() {
        let input = t(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let kernel = T64::ones(&[1, 1, 1, 2, 2]);
        let bias = T64::zeros(&[1]);
        let out = input.conv3d(&kernel, &bias, [0, 0, 0], [1, 1, 1]).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data()[0], 10.0);
    }

    #[test]
    fn conv3d_channel_mismatch_names_both_shapes() {
        let input = T64::ones(&[2, 3, 3, 3]);
        let kernel = T64::ones(&[1, 3, 1, 1, 1]);
        let bias = T64::zeros(&[1]);
        let err = input
            .conv3d(&kernel, &bias, [0, 0, 0], [1, 1, 1])
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3, 3, 3]") && msg.contains("[1, 3, 1, 1, 1]"), "{msg}");
    }

    #[test]
    fn conv3d_non_integer_output_rejected() {
        let input = T64::ones(&[1, 1, 5, 5]);
        let kernel = T64::ones(&[1, 1, 1, 2, 2]);
        let bias = T64::zeros(&[1]);
        // (5 - 2) % 2 != 0 on the h axis
        let err = input
            .conv3d(&kernel, &bias, [0, 0, 0], [1, 2, 2])
            .unwrap_err();
        assert!(matches!(err, TensorError::NonIntegerOutput { axis: 1, .. }));
    }

    #[test]
    fn conv3d_kernel_larger_than_padded_input_rejected() {
        let input = T64::ones(&[1, 1, 2, 2]);
        let kernel = T64::ones(&[1, 1, 1, 5, 5]);
        let bias = T64::zeros(&[1]);
        assert!(input.conv3d(&kernel, &bias, [0, 1, 1], [1, 1, 1]).is_err());
    }

    // linear examples

    #[test]
    fn linear_identity_map() {
        let x = t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let w = t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = T64::zeros(&[2]);
        let y = x.linear(&w, &b).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn linear_hand_sum() {
        let x = t(&[1, 2], vec![1.0, 2.0]);
        let w = t(&[2, 1], vec![1.0, 1.0]);
        let b = t(&[1], vec![3.0]);
        let y = x.linear(&w, &b).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn linear_dimension_mismatch_rejected() {
        let x = t(&[1, 3], vec![1.0, 2.0, 3.0]);
        let w = t(&[2, 1], vec![1.0, 1.0]);
        let b = T64::zeros(&[1]);
        assert!(x.linear(&w, &b).is_err());
    }

    // softmax examples

    #[test]
    fn softmax_constant_vector_is_uniform() {
        for n in [1usize, 3, 7] {
            let x = T64::full(&[n], 2.5);
            let y = x.softmax(0).unwrap();
            for &v in y.data() {
                assert!((v - 1.0 / n as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_closed_form() {
        let x = t(&[2], vec![0.0, 3.0f64.ln()]);
        let y = x.softmax(0).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-15);
        assert!((y.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_large_inputs_stay_finite() {
        let x = t(&[2], vec![1000.0, 1001.0]);
        let y = x.softmax(0).unwrap();
        assert!(y.data().iter().all(|v| v.is_finite()));
        assert!((y.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_bad_axis_rejected() {
        let x = t(&[2], vec![0.0, 1.0]);
        assert!(x.softmax(1).is_err());
    }

    // reduce / concat / slice / reshape examples

    #[test]
    fn concat_shape_law() {
        let a = t(&[1, 2], vec![1.0, 2.0]);
        let b = t(&[1, 2], vec![3.0, 4.0]);
        let c = concat(&[&a, &b], 0).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn mean_of_ones_is_ones() {
        let x = T64::ones(&[3, 4]);
        let m = x.mean_axis(0).unwrap();
        assert_eq!(m.shape(), &[4]);
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn slice_then_concat_is_identity() {
        let x = t(&[2, 4], (0..8).map(|v| v as f64 * 0.5 - 1.0).collect());
        let left = x.slice_axis(1, 0, 2).unwrap();
        let right = x.slice_axis(1, 2, 4).unwrap();
        let back = concat(&[&left, &right], 1).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn reshape_preserves_order_and_count() {
        let x = t(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = x.reshape(&[3, 2]).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(x.reshape(&[4, 2]).is_err());
    }

    #[test]
    fn permute_transposes() {
        let x = t(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = x.permute(&[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn max_reduce_tracks_first_max() {
        let x = t(&[2, 2], vec![3.0, 1.0, 3.0, 2.0]);
        let y = x.max_axis(0).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
    }

    #[test]
    fn max_pool_basic() {
        let x = t(&[1, 1, 2, 4], vec![1.0, 2.0, 5.0, 0.0, 3.0, 0.0, 1.0, 6.0]);
        let y = x.max_pool_hw(2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.data(), &[3.0, 6.0]);
    }

    #[test]
    fn avg_pool_dyadic_exact() {
        let x = t(&[1, 1, 2, 2], vec![1.0, 0.0, 1.0, 1.0]);
        let y = x.avg_pool_hw(2).unwrap();
        assert_eq!(y.data(), &[0.75]);
    }

    #[test]
    fn softplus_extreme_inputs_finite() {
        let x = t(&[3], vec![-800.0, 0.0, 800.0]);
        let y = x.softplus();
        assert!(y.data().iter().all(|v| v.is_finite()));
        assert!((y.data()[1] - 2.0f64.ln()).abs() < 1e-15);
        assert!((y.data()[2] - 800.0).abs() < 1e-9);
    }

    #[test]
    fn generic_scalar_f32_matches_f64_shape_and_value() {
        let x32 = Tensor::<f32>::from_vec(&[2], vec![0.5, -0.5]).unwrap();
        let y32 = x32.softmax(0).unwrap();
        let x64 = Tensor::<f64>::from_vec(&[2], vec![0.5, -0.5]).unwrap();
        let y64 = x64.softmax(0).unwrap();
        for (a, b) in y32.data().iter().zip(y64.data()) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }
}
