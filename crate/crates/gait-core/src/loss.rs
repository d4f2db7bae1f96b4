//! Weighted triplet loss over all embedding heads.
//!
//! For each head and each anchor, the positive set P(a) holds the other
//! items with the anchor's identity and the negative set N(a) everything
//! else. The per-anchor loss is
//! [margin + sum_p w_p D_ap - sum_n w_n D_an]_+ with uniform weights
//! (w_p = 1/|P(a)|, w_n = 1/|N(a)|) and Euclidean distances; the total is
//! the mean over anchor-head terms. Anchors without positives contribute
//! nothing and are counted in the diagnostics.
//!
//! Scalar terms are reduced with a balanced pairwise tree so that batches
//! of identical embeddings produce exactly the margin.

use crate::error::ModelError;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct TripletConfig {
    /// Hinge margin m (>= 0). Positive and negative weights are uniform
    /// within each set, so they sum to one by construction.
    pub margin: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig { margin: 0.2 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TripletStats {
    /// Anchor-head terms that entered the mean.
    pub terms: usize,
    /// Anchor-head terms skipped for lack of positives or negatives.
    pub skipped: usize,
    /// Fraction of contributing terms with an active hinge.
    pub active_fraction: f64,
}

/// Balanced pairwise sum of scalar tensors.
fn sum_tree<T: Scalar>(mut terms: Vec<Tensor<T>>) -> Result<Tensor<T>, ModelError> {
    if terms.is_empty() {
        return Ok(Tensor::scalar(T::zero()));
    }
    while terms.len() > 1 {
        let mut next = Vec::with_capacity(terms.len().div_ceil(2));
        let mut iter = terms.into_iter();
        while let Some(a) = iter.next() {
            match iter.next() {
                Some(b) => next.push(a.add(&b)?),
                None => next.push(a),
            }
        }
        terms = next;
    }
    Ok(terms.pop().unwrap())
}

/// Euclidean distance between head rows of two embedding sets.
fn head_distance<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    head: usize,
) -> Result<Tensor<T>, ModelError> {
    let d = a.shape()[1];
    let ra = a.slice_axis(0, head, head + 1)?.reshape(&[d])?;
    let rb = b.slice_axis(0, head, head + 1)?.reshape(&[d])?;
    let diff = ra.sub(&rb)?;
    Ok(diff.mul(&diff)?.sum_all().sqrt())
}

/// Triplet loss over a batch of per-item embedding sets (each [C, d_e]).
///
/// Returns the scalar loss tensor plus diagnostics. Requires at least two
/// distinct identities to produce a nonzero term count.
pub fn triplet_loss<T: Scalar>(
    embeddings: &[Tensor<T>],
    identities: &[usize],
    cfg: &TripletConfig,
) -> Result<(Tensor<T>, TripletStats), ModelError> {
    if embeddings.len() != identities.len() {
        return Err(ModelError::Config(format!(
            "{} embedding sets vs {} identity labels",
            embeddings.len(),
            identities.len()
        )));
    }
    if embeddings.is_empty() {
        return Err(ModelError::Config("empty batch".into()));
    }
    if cfg.margin < 0.0 {
        return Err(ModelError::Config(format!(
            "margin must be non-negative, got {}",
            cfg.margin
        )));
    }
    let heads = embeddings[0].shape()[0];
    for e in embeddings {
        if e.rank() != 2 || e.shape() != embeddings[0].shape() {
            return Err(ModelError::Config(format!(
                "embedding sets disagree in shape: {:?} vs {:?}",
                e.shape(),
                embeddings[0].shape()
            )));
        }
    }
    let n = embeddings.len();
    let margin = lit::<T>(cfg.margin);

    // Distances are symmetric; compute each unordered pair once per head.
    let mut dist: Vec<Option<Tensor<T>>> = vec![None; n * n * heads];
    let mut get_dist = |i: usize, j: usize, c: usize| -> Result<Tensor<T>, ModelError> {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let key = (lo * n + hi) * heads + c;
        if dist[key].is_none() {
            dist[key] = Some(head_distance(&embeddings[lo], &embeddings[hi], c)?);
        }
        Ok(dist[key].clone().unwrap())
    };

    let mut terms: Vec<Tensor<T>> = Vec::new();
    let mut skipped = 0usize;
    let mut active = 0usize;
    for c in 0..heads {
        for a in 0..n {
            let positives: Vec<usize> = (0..n)
                .filter(|&j| j != a && identities[j] == identities[a])
                .collect();
            let negatives: Vec<usize> = (0..n).filter(|&j| identities[j] != identities[a]).collect();
            if positives.is_empty() || negatives.is_empty() {
                skipped += 1;
                continue;
            }
            let pos_terms: Vec<Tensor<T>> = positives
                .iter()
                .map(|&j| get_dist(a, j, c))
                .collect::<Result<_, _>>()?;
            let neg_terms: Vec<Tensor<T>> = negatives
                .iter()
                .map(|&j| get_dist(a, j, c))
                .collect::<Result<_, _>>()?;
            let w_p = T::one() / T::from_usize(positives.len()).unwrap();
            let w_n = T::one() / T::from_usize(negatives.len()).unwrap();
            let pos = sum_tree(pos_terms)?.scale(w_p);
            let neg = sum_tree(neg_terms)?.scale(w_n);
            let arg = pos.sub(&neg)?.add_scalar(margin);
            if arg.scalar_value()? > T::zero() {
                active += 1;
            }
            terms.push(arg.relu());
        }
    }
    let stats = TripletStats {
        terms: terms.len(),
        skipped,
        active_fraction: if terms.is_empty() {
            0.0
        } else {
            active as f64 / terms.len() as f64
        },
    };
    let count = terms.len();
    let total = if count == 0 {
        Tensor::scalar(T::zero())
    } else {
        sum_tree(terms)?.scale(T::one() / T::from_usize(count).unwrap())
    };
    Ok((total, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    type T64 = Tensor<f64>;

    fn rand_set(rng: &mut ChaCha12Rng, heads: usize, dim: usize) -> T64 {
        let data: Vec<f64> = (0..heads * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        T64::from_vec(&[heads, dim], data).unwrap()
    }

    /// Plain-f64 enumeration of the loss definition, independent of the
    /// tensor graph.
    fn oracle(embeddings: &[Vec<f64>], heads: usize, dim: usize, ids: &[usize], margin: f64) -> f64 {
        let n = embeddings.len();
        let d = |i: usize, j: usize, c: usize| -> f64 {
            let mut s = 0.0;
            for k in 0..dim {
                let diff = embeddings[i][c * dim + k] - embeddings[j][c * dim + k];
                s += diff * diff;
            }
            s.sqrt()
        };
        let mut total = 0.0;
        let mut count = 0usize;
        for c in 0..heads {
            for a in 0..n {
                let pos: Vec<usize> = (0..n).filter(|&j| j != a && ids[j] == ids[a]).collect();
                let neg: Vec<usize> = (0..n).filter(|&j| ids[j] != ids[a]).collect();
                if pos.is_empty() || neg.is_empty() {
                    continue;
                }
                let dp: f64 = pos.iter().map(|&j| d(a, j, c)).sum::<f64>() / pos.len() as f64;
                let dn: f64 = neg.iter().map(|&j| d(a, j, c)).sum::<f64>() / neg.len() as f64;
                total += (margin + dp - dn).max(0.0);
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    #[test]
    fn all_equal_embeddings_loss_is_exactly_margin() {
        // Power-of-two term count keeps the pairwise sum exact.
        let e = T64::from_vec(&[2, 4], vec![0.3; 8]).unwrap();
        let sets = vec![e.clone(), e.clone(), e.clone(), e];
        let cfg = TripletConfig { margin: 0.2 };
        let (loss, stats) = triplet_loss(&sets, &[0, 0, 1, 1], &cfg).unwrap();
        assert_eq!(loss.scalar_value().unwrap(), 0.2);
        assert_eq!(stats.terms, 8);
        assert_eq!(stats.skipped, 0);
    }

    #[test]
    fn separated_clusters_beyond_margin_give_zero_loss() {
        let a = T64::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let b = T64::from_vec(&[1, 2], vec![10.0, 0.0]).unwrap();
        let sets = vec![a.clone(), a, b.clone(), b];
        let cfg = TripletConfig { margin: 0.5 };
        let (loss, stats) = triplet_loss(&sets, &[0, 0, 1, 1], &cfg).unwrap();
        assert_eq!(loss.scalar_value().unwrap(), 0.0);
        assert_eq!(stats.active_fraction, 0.0);
    }

    #[test]
    fn matches_enumeration_oracle_on_random_batches() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let cfg = TripletConfig { margin: 0.3 };
        for p in 2..=4usize {
            for k in 2..=4usize {
                let heads = 3;
                let dim = 5;
                let mut sets = Vec::new();
                let mut ids = Vec::new();
                for pi in 0..p {
                    for _ in 0..k {
                        sets.push(rand_set(&mut rng, heads, dim));
                        ids.push(pi);
                    }
                }
                let (loss, stats) = triplet_loss(&sets, &ids, &cfg).unwrap();
                let raw: Vec<Vec<f64>> = sets.iter().map(|s| s.to_vec()).collect();
                let expect = oracle(&raw, heads, dim, &ids, cfg.margin);
                let got = loss.scalar_value().unwrap();
                assert!(
                    (got - expect).abs() < 1e-12,
                    "P={p} K={k}: {got} vs {expect}"
                );
                assert_eq!(stats.terms, heads * p * k);
            }
        }
    }

    #[test]
    fn anchor_without_positive_is_skipped_and_counted() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let sets = vec![
            rand_set(&mut rng, 2, 3),
            rand_set(&mut rng, 2, 3),
            rand_set(&mut rng, 2, 3),
        ];
        // identity 1 appears once: that anchor has no positives.
        let (loss, stats) = triplet_loss(&sets, &[0, 0, 1], &TripletConfig::default()).unwrap();
        assert_eq!(stats.skipped, 2); // one anchor x two heads
        assert_eq!(stats.terms, 4);
        assert!(loss.scalar_value().unwrap().is_finite());
    }

    #[test]
    fn single_identity_batch_rejects_nothing_but_counts_all_skipped() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let sets = vec![rand_set(&mut rng, 2, 3), rand_set(&mut rng, 2, 3)];
        let (loss, stats) = triplet_loss(&sets, &[0, 0], &TripletConfig::default()).unwrap();
        assert_eq!(loss.scalar_value().unwrap(), 0.0);
        assert_eq!(stats.terms, 0);
        assert_eq!(stats.skipped, 4);
    }

    #[test]
    fn gradient_matches_finite_differences_away_from_kinks() {
        use crate::tensor::grad_check;
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let heads = 2;
        let dim = 4;
        // Spread clusters so every hinge argument is far from zero.
        let mut sets = Vec::new();
        let mut ids = Vec::new();
        for pi in 0..2usize {
            for _ in 0..2usize {
                let offset = pi as f64 * 0.8;
                let data: Vec<f64> = (0..heads * dim)
                    .map(|_| offset + rng.random_range(-0.25..0.25))
                    .collect();
                sets.push(T64::from_vec(&[heads, dim], data).unwrap());
                ids.push(pi);
            }
        }
        let cfg = TripletConfig { margin: 2.5 };
        // hinge must be active and away from the kink or the check is vacuous
        let (loss0, stats) = triplet_loss(&sets, &ids, &cfg).unwrap();
        assert!(stats.terms > 0);
        assert!(stats.active_fraction > 0.5, "hinges inactive: {}", stats.active_fraction);
        assert!(loss0.scalar_value().unwrap() > 1e-3);
        let ids2 = ids.clone();
        let err = grad_check(
            |ins| {
                let (loss, _) = triplet_loss(ins, &ids2, &cfg)
                    .map_err(|_| crate::error::TensorError::invalid("test", "loss"))?;
                Ok(loss)
            },
            &sets,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-5, "max rel err {err}");
    }
}
