//! Brute-force reference for the selection pipeline, kept deliberately
//! independent of the tensor kernels: explicit column sums, explicit
//! sliding-window pooling, and a full sort with the lowest-index
//! tie-break. Used by the verify command and the acceptance suite as the
//! second route of the oracle-equivalence check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{PoolMode, Tensor};

/// One randomly drawn compression scenario.
#[derive(Debug, Clone)]
pub struct OracleCase {
    pub seed: u64,
    pub heads: usize,
    pub l_prompt: usize,
    pub window: usize,
    pub kernel: usize,
    pub pooling: PoolMode,
    /// Total compressed length; drawn in `(window, l_prompt]` so the case
    /// never bypasses.
    pub capacity: usize,
    /// Softmax-normalized observation rows, `[heads, window, l_prompt]`.
    pub obs_weights: Tensor<f64>,
}

/// Draws a random case: heads 1..=4, prompt length 8..=256, kernel in
/// {1,3,5,7}, both pooling modes.
pub fn random_case(seed: u64) -> OracleCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = rng.gen_range(1..=4);
    let l_prompt = rng.gen_range(8..=256);
    let window = rng.gen_range(1..=l_prompt / 2);
    let kernel = [1, 3, 5, 7][rng.gen_range(0..4)];
    let pooling = if rng.gen_bool(0.5) {
        PoolMode::Max
    } else {
        PoolMode::Avg
    };
    let capacity = rng.gen_range(window + 1..=l_prompt);
    let mut data = vec![0.0f64; heads * window * l_prompt];
    for row in data.chunks_mut(l_prompt) {
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    OracleCase {
        seed,
        heads,
        l_prompt,
        window,
        kernel,
        pooling,
        capacity,
        obs_weights: Tensor::new(vec![heads, window, l_prompt], data).expect("sized buffer"),
    }
}

/// Kept prefix indices per head, computed the slow way from raw
/// observation weights.
pub fn kept_indices(
    obs: &Tensor<f64>,
    window: usize,
    kernel: usize,
    pooling: PoolMode,
    k: usize,
) -> Vec<Vec<usize>> {
    let heads = obs.shape()[0];
    let obs_rows = obs.shape()[1];
    let prompt = obs.shape()[2];
    let prefix = prompt - window;
    let half = (kernel / 2) as isize;
    let mut out = Vec::with_capacity(heads);
    for h in 0..heads {
        // explicit per-column summation over the last `window` rows
        let mut scores = vec![0.0f64; prefix];
        for r in obs_rows - window..obs_rows {
            for (j, s) in scores.iter_mut().enumerate() {
                *s += obs.data()[(h * obs_rows + r) * prompt + j];
            }
        }
        // explicit sliding-window pooling, symmetric padding
        let mut pooled = vec![0.0f64; prefix];
        for i in 0..prefix as isize {
            let mut acc: f64 = match pooling {
                PoolMode::Max => f64::NEG_INFINITY,
                PoolMode::Avg => 0.0,
            };
            for o in -half..=half {
                let j = i + o;
                let v = if j < 0 || j >= prefix as isize {
                    match pooling {
                        PoolMode::Max => f64::NEG_INFINITY,
                        PoolMode::Avg => 0.0,
                    }
                } else {
                    scores[j as usize]
                };
                match pooling {
                    PoolMode::Max => acc = acc.max(v),
                    PoolMode::Avg => acc += v,
                }
            }
            pooled[i as usize] = match pooling {
                PoolMode::Max => acc,
                PoolMode::Avg => acc / kernel as f64,
            };
        }
        // full sort with lowest-index tie-break
        let mut pairs: Vec<(usize, f64)> = pooled.iter().copied().enumerate().collect();
        pairs.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("finite scores")
                .then(a.0.cmp(&b.0))
        });
        let mut kept: Vec<usize> = pairs[..k].iter().map(|p| p.0).collect();
        kept.sort_unstable();
        out.push(kept);
    }
    out
}
