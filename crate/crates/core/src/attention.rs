//! Numeric forward pass of the spatial attention block: tokens are the BEV
//! map positions, reweighted by `softmax(Q Kᵀ) V` with `Q = X Wq`,
//! `K = X Wk`, `V = X Wv` and a row-wise softmax.
//!
//! Every reduction over tokens (softmax denominators, the attention-times-V
//! contraction) is evaluated in value-sorted order, so outputs are invariant
//! to the order tokens are presented in, not just up to rounding.

use ndarray::{Array2, Array3};
use thiserror::Error;

use crate::scalar::{sorted_sum, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("feature map contains non-finite entries")]
    NonFiniteFeatures,
    #[error("weight matrices must be square {expected}x{expected}, got {got_rows}x{got_cols}")]
    BadWeightShape {
        expected: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("attention matrix needs {required} elements, over the budget of {budget}")]
    BudgetExceeded { required: usize, budget: usize },
}

/// Map resolution relative to the grid: coarse halves it, fine doubles it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    Coarse,
    Regular,
    Fine,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Coarse, Level::Regular, Level::Fine];

    /// Cell size multiplier relative to the regular map.
    pub fn stride(self) -> f64 {
        match self {
            Level::Coarse => 2.0,
            Level::Regular => 1.0,
            Level::Fine => 0.5,
        }
    }
}

/// A dense `H x W x C` feature map at one pyramid level. Entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<S: Scalar> {
    data: Array3<S>,
    level: Level,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn new(data: Array3<S>, level: Level) -> Result<Self, AttentionError> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AttentionError::NonFiniteFeatures);
        }
        Ok(Self { data, level })
    }

    pub fn data(&self) -> &Array3<S> {
        &self.data
    }

    pub fn level(&self) -> Level {
        self.level
    }

    /// `(height, width, channels)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2])
    }
}

/// Query/key/value projection matrices, each `C x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<S: Scalar> {
    pub w_q: Array2<S>,
    pub w_k: Array2<S>,
    pub w_v: Array2<S>,
}

impl<S: Scalar> AttentionWeights<S> {
    pub fn new(w_q: Array2<S>, w_k: Array2<S>, w_v: Array2<S>) -> Result<Self, AttentionError> {
        let c = w_q.nrows();
        for m in [&w_q, &w_k, &w_v] {
            if m.nrows() != c || m.ncols() != c {
                return Err(AttentionError::BadWeightShape {
                    expected: c,
                    got_rows: m.nrows(),
                    got_cols: m.ncols(),
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(AttentionError::NonFiniteFeatures);
            }
        }
        Ok(Self { w_q, w_k, w_v })
    }

    pub fn channels(&self) -> usize {
        self.w_q.nrows()
    }
}

/// Default cap on the number of `N x N` attention-matrix elements.
pub const DEFAULT_ATTENTION_BUDGET: usize = 1 << 24;

fn project<S: Scalar>(tokens: &Array2<S>, w: &Array2<S>) -> Array2<S> {
    let n = tokens.nrows();
    let c = tokens.ncols();
    let mut out = Array2::zeros((n, c));
    for i in 0..n {
        for j in 0..c {
            let mut acc = S::zero();
            for k in 0..c {
                acc += tokens[[i, k]] * w[[k, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Row-stochastic `softmax(Q Kᵀ)` over tokens in row-major `(v, u)` order.
///
/// Rows sum to one up to rounding; row values are invariant to token order.
pub fn attention_matrix<S: Scalar>(
    x: &FeatureMap<S>,
    w: &AttentionWeights<S>,
    budget: usize,
) -> Result<Array2<S>, AttentionError> {
    let (h, wd, c) = x.shape();
    if w.channels() != c {
        return Err(AttentionError::BadWeightShape {
            expected: c,
            got_rows: w.channels(),
            got_cols: w.channels(),
        });
    }
    let n = h * wd;
    let required = n.saturating_mul(n);
    if required > budget {
        return Err(AttentionError::BudgetExceeded { required, budget });
    }
    let tokens = x
        .data
        .to_shape((n, c))
        .expect("standard layout reshape")
        .to_owned();
    let q = project(&tokens, &w.w_q);
    let k = project(&tokens, &w.w_k);

    let mut scores = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut acc = S::zero();
            for ch in 0..c {
                acc += q[[i, ch]] * k[[j, ch]];
            }
            scores[[i, j]] = acc;
        }
    }

    let mut buf = Vec::with_capacity(n);
    for i in 0..n {
        let row_max = (0..n)
            .map(|j| scores[[i, j]])
            .fold(S::neg_infinity(), S::max);
        buf.clear();
        for j in 0..n {
            let e = (scores[[i, j]] - row_max).exp();
            scores[[i, j]] = e;
            buf.push(e);
        }
        let denom = sorted_sum(&mut buf);
        for j in 0..n {
            scores[[i, j]] /= denom;
        }
    }
    Ok(scores)
}

/// Forward pass `X̄ = softmax(Q Kᵀ) V`, reshaped back to `H x W x C`.
pub fn spatial_attention<S: Scalar>(
    x: &FeatureMap<S>,
    w: &AttentionWeights<S>,
    budget: usize,
) -> Result<FeatureMap<S>, AttentionError> {
    let (h, wd, c) = x.shape();
    let n = h * wd;
    let attn = attention_matrix(x, w, budget)?;
    let tokens = x
        .data
        .to_shape((n, c))
        .expect("standard layout reshape")
        .to_owned();
    let v = project(&tokens, &w.w_v);

    let mut out = Array2::zeros((n, c));
    let mut buf = Vec::with_capacity(n);
    for i in 0..n {
        for ch in 0..c {
            buf.clear();
            for j in 0..n {
                buf.push(attn[[i, j]] * v[[j, ch]]);
            }
            out[[i, ch]] = sorted_sum(&mut buf);
        }
    }
    let data = out
        .into_shape_with_order((h, wd, c))
        .expect("token count matches map");
    Ok(FeatureMap {
        data,
        level: x.level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureMap<f64> {
        let data = Array3::from_shape_fn((h, w, c), |_| rng.random_range(-1.0..1.0));
        FeatureMap::new(data, Level::Regular).unwrap()
    }

    fn random_weights(rng: &mut ChaCha8Rng, c: usize) -> AttentionWeights<f64> {
        let m =
            |rng: &mut ChaCha8Rng| Array2::from_shape_fn((c, c), |_| rng.random_range(-1.0..1.0));
        AttentionWeights::new(m(rng), m(rng), m(rng)).unwrap()
    }

    #[test]
    fn constant_value_rows_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_map(&mut rng, 3, 3, 2);
        // Wv = 0 makes V constant (zero) across positions; any convex
        // combination of identical rows is that row.
        let w = AttentionWeights::new(
            Array2::from_shape_fn((2, 2), |_| rng.random_range(-1.0..1.0)),
            Array2::from_shape_fn((2, 2), |_| rng.random_range(-1.0..1.0)),
            Array2::zeros((2, 2)),
        )
        .unwrap();
        let out = spatial_attention(&x, &w, DEFAULT_ATTENTION_BUDGET).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_query_key_gives_token_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_map(&mut rng, 2, 2, 3);
        let w = AttentionWeights::new(Array2::zeros((3, 3)), Array2::zeros((3, 3)), Array2::eye(3))
            .unwrap();
        let out = spatial_attention(&x, &w, DEFAULT_ATTENTION_BUDGET).unwrap();
        let n = 4.0;
        for ch in 0..3 {
            let mean: f64 = x.data().iter().skip(ch).step_by(3).sum::<f64>() / n;
            for val in out.data().iter().skip(ch).step_by(3) {
                assert!((val - mean).abs() < 1e-12, "{val} vs {mean}");
            }
        }
    }

    #[test]
    fn matches_naive_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x = random_map(&mut rng, 4, 4, 3);
            let w = random_weights(&mut rng, 3);
            let out = spatial_attention(&x, &w, DEFAULT_ATTENTION_BUDGET).unwrap();

            // Naive re-derivation with plain loops and unsorted reductions.
            let n = 16;
            let c = 3;
            let flat: Vec<f64> = x.data().iter().copied().collect();
            let mut q = vec![0.0; n * c];
            let mut k = vec![0.0; n * c];
            let mut v = vec![0.0; n * c];
            for i in 0..n {
                for j in 0..c {
                    for t in 0..c {
                        q[i * c + j] += flat[i * c + t] * w.w_q[[t, j]];
                        k[i * c + j] += flat[i * c + t] * w.w_k[[t, j]];
                        v[i * c + j] += flat[i * c + t] * w.w_v[[t, j]];
                    }
                }
            }
            let out_flat: Vec<f64> = out.data().iter().copied().collect();
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| (0..c).map(|t| q[i * c + t] * k[j * c + t]).sum())
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let denom: f64 = exps.iter().sum();
                for ch in 0..c {
                    let want: f64 = (0..n).map(|j| exps[j] / denom * v[j * c + ch]).sum();
                    let got = out_flat[i * c + ch];
                    assert!(
                        (got - want).abs() < 1e-9,
                        "token {i} ch {ch}: {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_map(&mut rng, 4, 4, 3);
        let w = random_weights(&mut rng, 3);
        let attn = attention_matrix(&x, &w, DEFAULT_ATTENTION_BUDGET).unwrap();
        for row in attn.rows() {
            let sum: f64 = row.sum();
            assert!((sum - 1.0).abs() < 1e-12, "row sum {sum}");
            assert!(row.iter().all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn permutation_equivariant_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 3;
        let wd = 4;
        let c = 3;
        let x = random_map(&mut rng, h, wd, c);
        let w = random_weights(&mut rng, c);
        let out = spatial_attention(&x, &w, DEFAULT_ATTENTION_BUDGET).unwrap();

        let n = h * wd;
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let flat = x.data().to_shape((n, c)).unwrap().to_owned();
        let mut permuted = Array2::zeros((n, c));
        for (dst, &src) in perm.iter().enumerate() {
            permuted.row_mut(dst).assign(&flat.row(src));
        }
        let xp = FeatureMap::new(
            permuted.into_shape_with_order((h, wd, c)).unwrap(),
            Level::Regular,
        )
        .unwrap();
        let outp = spatial_attention(&xp, &w, DEFAULT_ATTENTION_BUDGET).unwrap();

        let base = out.data().to_shape((n, c)).unwrap().to_owned();
        let got = outp.data().to_shape((n, c)).unwrap().to_owned();
        for (dst, &src) in perm.iter().enumerate() {
            for ch in 0..c {
                assert_eq!(
                    got[[dst, ch]],
                    base[[src, ch]],
                    "token {src}->{dst} ch {ch}"
                );
            }
        }
    }

    #[test]
    fn outputs_stay_within_value_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let x = random_map(&mut rng, 3, 3, 2);
            let w = random_weights(&mut rng, 2);
            let out = spatial_attention(&x, &w, DEFAULT_ATTENTION_BUDGET).unwrap();
            let n = 9;
            let tokens = x.data().to_shape((n, 2)).unwrap().to_owned();
            let v = project(&tokens, &w.w_v);
            for ch in 0..2 {
                let lo = (0..n).map(|j| v[[j, ch]]).fold(f64::INFINITY, f64::min);
                let hi = (0..n).map(|j| v[[j, ch]]).fold(f64::NEG_INFINITY, f64::max);
                for val in out.data().iter().skip(ch).step_by(2) {
                    assert!(*val >= lo - 1e-12 && *val <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn budget_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_map(&mut rng, 8, 8, 2);
        let w = random_weights(&mut rng, 2);
        let err = spatial_attention(&x, &w, 1000).unwrap_err();
        assert_eq!(
            err,
            AttentionError::BudgetExceeded {
                required: 64 * 64,
                budget: 1000
            }
        );
    }

    #[test]
    fn rejects_non_finite_input() {
        let mut data = Array3::zeros((2, 2, 1));
        data[[0, 0, 0]] = f64::NAN;
        assert_eq!(
            FeatureMap::new(data, Level::Regular).unwrap_err(),
            AttentionError::NonFiniteFeatures
        );
    }
}
