//! Synthetic workloads: planted-attention tensors with known ground-truth
//! important positions (a desk-scale stand-in for real-model attention),
//! and key-value "lines" prompts with fixed record structure for
//! positional and cluster tests.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SnapError};
use crate::snapkv::SelectedIndices;
use crate::tensor::{Element, Tensor};

/// Specification of a planted attention tensor.
#[derive(Debug, Clone)]
pub struct PlantedSpec {
    pub prefix_len: usize,
    pub obs_len: usize,
    pub heads: usize,
    /// Per-head planted positions (cluster start positions), each
    /// `< prefix_len`.
    pub planted: Vec<Vec<usize>>,
    /// Total attention mass on planted positions per row, in (0, 1].
    pub planted_mass: f64,
    /// Each planted position is widened to a contiguous run of this width.
    pub cluster_width: usize,
    pub seed: u64,
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.prefix_len == 0 || self.obs_len == 0 || self.heads == 0 {
            return Err(SnapError::Config(
                "prefix_len, obs_len and heads must be positive".into(),
            ));
        }
        if self.planted.len() != self.heads {
            return Err(SnapError::Config(format!(
                "{} planted lists for {} heads",
                self.planted.len(),
                self.heads
            )));
        }
        if self.cluster_width == 0 {
            return Err(SnapError::Config("cluster_width must be >= 1".into()));
        }
        if !(self.planted_mass > 0.0 && self.planted_mass <= 1.0) {
            return Err(SnapError::Config(format!(
                "planted_mass must be in (0, 1], got {}",
                self.planted_mass
            )));
        }
        for (h, list) in self.planted.iter().enumerate() {
            if list.is_empty() {
                return Err(SnapError::Config(format!("head {h}: no planted positions")));
            }
            if list.iter().any(|&p| p >= self.prefix_len) {
                return Err(SnapError::Config(format!(
                    "head {h}: planted position out of prefix range {}",
                    self.prefix_len
                )));
            }
        }
        Ok(())
    }

    /// Planted positions widened to `cluster_width`, per head, sorted and
    /// deduplicated; this is the ground truth a selector should recover.
    pub fn truth(&self) -> Vec<Vec<usize>> {
        self.planted
            .iter()
            .map(|list| {
                let mut set = BTreeSet::new();
                for &p in list {
                    for q in p..(p + self.cluster_width).min(self.prefix_len) {
                        set.insert(q);
                    }
                }
                set.into_iter().collect()
            })
            .collect()
    }
}

/// A planted attention tensor together with its ground truth.
#[derive(Debug, Clone)]
pub struct PlantedAttention<T> {
    /// `[heads, obs_len, prefix_len + obs_len]`; each row is a valid
    /// distribution over its causal support, directly acceptable to
    /// `vote()`.
    pub tensor: Tensor<T>,
    pub truth: Vec<Vec<usize>>,
}

/// Builds observation-window attention rows with `planted_mass` spread
/// evenly over the (widened) planted positions and the remainder drawn as
/// symmetric-Dirichlet noise over the rest of each row's causal support.
pub fn planted_attention<T: Element>(spec: &PlantedSpec) -> Result<PlantedAttention<T>> {
    spec.validate()?;
    let truth = spec.truth();
    let prompt = spec.prefix_len + spec.obs_len;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tensor = Tensor::zeros(vec![spec.heads, spec.obs_len, prompt]);
    for h in 0..spec.heads {
        for r in 0..spec.obs_len {
            let support = spec.prefix_len + r + 1; // causal: query at prefix_len + r
            let row_base = (h * spec.obs_len + r) * prompt;
            let row = &mut tensor.data_mut()[row_base..row_base + support];
            fill_planted_row(row, &truth[h], spec.planted_mass, &mut rng);
        }
    }
    tensor.check_finite("planted_attention")?;
    Ok(PlantedAttention { tensor, truth })
}

/// Causal attention grid `[heads, total_len, total_len]` in which every
/// query row follows the same planted pattern (a stationary attention
/// allocation), for overlap-profile experiments.
pub fn stationary_attention<T: Element>(
    spec: &PlantedSpec,
    total_len: usize,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let truth = spec.truth();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tensor = Tensor::zeros(vec![spec.heads, total_len, total_len]);
    for h in 0..spec.heads {
        for t in 0..total_len {
            let support = t + 1;
            let row_base = (h * total_len + t) * total_len;
            let row = &mut tensor.data_mut()[row_base..row_base + support];
            let in_support: Vec<usize> =
                truth[h].iter().copied().filter(|&p| p <= t).collect();
            fill_planted_row(row, &in_support, spec.planted_mass, &mut rng);
        }
    }
    tensor.check_finite("stationary_attention")?;
    Ok(tensor)
}

/// Writes one distribution row: planted mass split evenly over `planted`,
/// the remainder Dirichlet(1) over the other positions. With no planted
/// position in support the whole row is noise; with no noise support the
/// whole mass goes to the planted positions.
fn fill_planted_row<T: Element>(
    row: &mut [T],
    planted: &[usize],
    planted_mass: f64,
    rng: &mut ChaCha8Rng,
) {
    let support = row.len();
    let planted: Vec<usize> = planted.iter().copied().filter(|&p| p < support).collect();
    let noise_count = support - planted.len();
    let (p_mass, n_mass) = if planted.is_empty() {
        (0.0, 1.0)
    } else if noise_count == 0 {
        (1.0, 0.0)
    } else {
        (planted_mass, 1.0 - planted_mass)
    };
    // Dirichlet(1) == normalized unit exponentials.
    let mut noise = vec![0.0f64; support];
    let mut noise_sum = 0.0;
    let planted_set: BTreeSet<usize> = planted.iter().copied().collect();
    for (i, n) in noise.iter_mut().enumerate() {
        if !planted_set.contains(&i) {
            *n = -(1.0 - rng.gen::<f64>()).ln();
            noise_sum += *n;
        }
    }
    for (i, v) in row.iter_mut().enumerate() {
        *v = if planted_set.contains(&i) {
            T::from_f64(p_mass / planted.len() as f64)
        } else if noise_sum > 0.0 {
            T::from_f64(n_mass * noise[i] / noise_sum)
        } else {
            T::zero()
        };
    }
}

/// Mean fraction of planted (widened) positions recovered per head.
pub fn recovery_rate(selected: &SelectedIndices, truth: &[Vec<usize>]) -> f64 {
    let mut acc = 0.0;
    for (h, t) in truth.iter().enumerate() {
        let sel: BTreeSet<usize> = selected.head(h).iter().copied().collect();
        let hit = t.iter().filter(|p| sel.contains(p)).count();
        acc += hit as f64 / t.len() as f64;
    }
    acc / truth.len() as f64
}

/// Reserved marker tokens of the lines prompt.
pub const KEY_MARK: u32 = 1;
pub const VAL_MARK: u32 = 2;
pub const SEP: u32 = 3;
/// Fixed header length in tokens.
pub const HEADER_LEN: usize = 4;
/// Fixed record length: marker + 2 key tokens + marker + 3 value tokens
/// + separator.
pub const RECORD_LEN: usize = 8;
const VALUE_LEN: usize = 3;
/// Synthetic token ids are drawn from `[FIRST_WORD, VOCAB)`.
pub const FIRST_WORD: u32 = 8;
pub const VOCAB: u32 = 256;

/// One key/value line: the two key tokens and the token span (start
/// inclusive, end exclusive) of its value in the prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvLine {
    pub key: (u32, u32),
    pub value_span: (usize, usize),
}

/// Deterministic lines-style prompt: a fixed header followed by
/// `n_lines` fixed-length key/value records, plus the map from each key
/// to its value's token span.
pub fn kv_lines_prompt(n_lines: usize, seed: u64) -> Result<(Vec<u32>, Vec<KvLine>)> {
    if n_lines == 0 {
        return Err(SnapError::Config("n_lines must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut word = || rng.gen_range(FIRST_WORD..VOCAB);
    let mut tokens = Vec::with_capacity(HEADER_LEN + n_lines * RECORD_LEN);
    for _ in 0..HEADER_LEN {
        tokens.push(word());
    }
    let mut map = Vec::with_capacity(n_lines);
    for _ in 0..n_lines {
        tokens.push(KEY_MARK);
        let key = (word(), word());
        tokens.push(key.0);
        tokens.push(key.1);
        tokens.push(VAL_MARK);
        let start = tokens.len();
        for _ in 0..VALUE_LEN {
            tokens.push(word());
        }
        map.push(KvLine {
            key,
            value_span: (start, start + VALUE_LEN),
        });
        tokens.push(SEP);
    }
    Ok((tokens, map))
}

const TOKEN_MAGIC: &[u8; 8] = b"SNAPTOK1";

/// Dumps a token stream as a flat little-endian binary file for replay.
pub fn dump_tokens<W: Write>(tokens: &[u32], mut w: W) -> Result<()> {
    w.write_all(TOKEN_MAGIC)?;
    w.write_all(&(tokens.len() as u64).to_le_bytes())?;
    for &t in tokens {
        w.write_all(&t.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_tokens<R: Read>(mut r: R) -> Result<Vec<u32>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TOKEN_MAGIC {
        return Err(SnapError::Format("bad token-file magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let n = u64::from_le_bytes(len) as usize;
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 4];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(u32::from_le_bytes(buf));
    }
    Ok(out)
}
