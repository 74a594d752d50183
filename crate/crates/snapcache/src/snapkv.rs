//! The compression algorithm: sum observation-window attention into
//! per-head vote scores, cluster them with 1-D pooling, select the top-k
//! prefix positions per head, and gather a compressed cache that keeps
//! the observation window verbatim.

use crate::attention::KvCache;
use crate::error::{Result, SnapError};
use crate::tensor::{Element, PoolMode, Tensor};

/// Compression hyperparameters. Exactly one of `max_capacity_prompt` and
/// `compression_rate` drives the per-head budget k; `max_capacity_prompt`
/// also gates the lossless bypass.
#[derive(Debug, Clone)]
pub struct CompressionConfig {
    /// Observation window length (the last `window_size` prompt tokens).
    pub window_size: usize,
    /// Total compressed prompt cache size (window included).
    pub max_capacity_prompt: Option<usize>,
    /// Fraction of prefix positions retained, in (0, 1].
    pub compression_rate: Option<f64>,
    /// Pooling kernel, odd.
    pub kernel_size: usize,
    pub pooling: PoolMode,
}

impl CompressionConfig {
    /// Capacity-driven config, the Listing-style parameterization.
    pub fn with_capacity(window_size: usize, max_capacity_prompt: usize) -> Self {
        Self {
            window_size,
            max_capacity_prompt: Some(max_capacity_prompt),
            compression_rate: None,
            kernel_size: 5,
            pooling: PoolMode::Max,
        }
    }

    /// Rate-driven config: k = floor(rate * prefix_len).
    pub fn with_rate(window_size: usize, rate: f64) -> Self {
        Self {
            window_size,
            max_capacity_prompt: None,
            compression_rate: Some(rate),
            kernel_size: 5,
            pooling: PoolMode::Max,
        }
    }

    pub fn kernel(mut self, kernel_size: usize) -> Self {
        self.kernel_size = kernel_size;
        self
    }

    pub fn pooling(mut self, pooling: PoolMode) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 {
            return Err(SnapError::Config("window_size must be positive".into()));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(SnapError::Config(format!(
                "kernel_size must be odd and positive, got {}",
                self.kernel_size
            )));
        }
        match (self.max_capacity_prompt, self.compression_rate) {
            (Some(cap), None) => {
                if cap <= self.window_size {
                    return Err(SnapError::Config(format!(
                        "max_capacity_prompt {} must exceed window_size {}",
                        cap, self.window_size
                    )));
                }
            }
            (None, Some(rate)) => {
                if !(rate > 0.0 && rate <= 1.0) {
                    return Err(SnapError::Config(format!(
                        "compression_rate must be in (0, 1], got {rate}"
                    )));
                }
            }
            (Some(_), Some(_)) => {
                return Err(SnapError::Config(
                    "set only one of max_capacity_prompt and compression_rate".into(),
                ))
            }
            (None, None) => {
                return Err(SnapError::Config(
                    "one of max_capacity_prompt and compression_rate is required".into(),
                ))
            }
        }
        Ok(())
    }

    /// Total compressed prompt length for a given prompt; prompts shorter
    /// than this bypass compression entirely.
    pub fn effective_capacity(&self, prompt_len: usize) -> usize {
        match self.max_capacity_prompt {
            Some(cap) => cap,
            None => {
                if prompt_len <= self.window_size {
                    return prompt_len;
                }
                let prefix = prompt_len - self.window_size;
                self.window_size + capacity_from_rate(self.compression_rate.unwrap(), prefix)
            }
        }
    }
}

fn capacity_from_rate(rate: f64, prefix_len: usize) -> usize {
    ((rate * prefix_len as f64).floor() as usize).clamp(1, prefix_len)
}

/// Per-head aggregated attention mass over prefix positions.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteScores<T> {
    /// `[num_kv_heads, L_prefix]`, every entry nonnegative.
    pub scores: Tensor<T>,
}

impl<T: Element> VoteScores<T> {
    pub fn new(scores: Tensor<T>) -> Result<Self> {
        if scores.rank() != 2 {
            return Err(SnapError::Shape(format!(
                "vote scores must be [heads, prefix], got {:?}",
                scores.shape()
            )));
        }
        scores.check_finite("vote scores")?;
        if scores.data().iter().any(|v| *v < T::zero()) {
            return Err(SnapError::Numeric(
                "vote scores must be nonnegative (sums of softmax weights)".into(),
            ));
        }
        Ok(Self { scores })
    }

    pub fn heads(&self) -> usize {
        self.scores.shape()[0]
    }

    pub fn prefix_len(&self) -> usize {
        self.scores.shape()[1]
    }

    pub fn head(&self, h: usize) -> &[T] {
        let l = self.prefix_len();
        &self.scores.data()[h * l..(h + 1) * l]
    }
}

/// Per-head selected prefix positions, sorted ascending, no duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectedIndices {
    indices: Vec<Vec<usize>>,
}

impl SelectedIndices {
    pub fn new(indices: Vec<Vec<usize>>, prefix_len: usize) -> Result<Self> {
        for (h, list) in indices.iter().enumerate() {
            for w in list.windows(2) {
                if w[1] <= w[0] {
                    return Err(SnapError::Config(format!(
                        "head {h}: indices must be strictly increasing"
                    )));
                }
            }
            if let Some(&last) = list.last() {
                if last >= prefix_len {
                    return Err(SnapError::Config(format!(
                        "head {h}: index {last} out of prefix range {prefix_len}"
                    )));
                }
            }
        }
        Ok(Self { indices })
    }

    pub fn heads(&self) -> usize {
        self.indices.len()
    }

    pub fn head(&self, h: usize) -> &[usize] {
        &self.indices[h]
    }

    pub fn as_slices(&self) -> &[Vec<usize>] {
        &self.indices
    }
}

/// Sums the last `window_size` observation rows over prefix columns only
/// (observation-window columns excluded).
pub fn vote<T: Element>(obs_weights: &Tensor<T>, window_size: usize) -> Result<VoteScores<T>> {
    if obs_weights.rank() != 3 {
        return Err(SnapError::Shape(format!(
            "obs_weights must be [heads, obs, prompt], got {:?}",
            obs_weights.shape()
        )));
    }
    let (heads, obs, prompt) = (
        obs_weights.shape()[0],
        obs_weights.shape()[1],
        obs_weights.shape()[2],
    );
    if prompt <= window_size {
        return Err(SnapError::Config(format!(
            "prompt length {prompt} leaves no prefix to compress (window {window_size})"
        )));
    }
    if obs < window_size {
        return Err(SnapError::Shape(format!(
            "obs_weights has {obs} rows, need at least window_size {window_size}"
        )));
    }
    let prefix = prompt - window_size;
    let mut scores = Tensor::zeros(vec![heads, prefix]);
    for h in 0..heads {
        let dst = &mut scores.data_mut()[h * prefix..(h + 1) * prefix];
        for r in obs - window_size..obs {
            let row = &obs_weights.data()[(h * obs + r) * prompt..(h * obs + r) * prompt + prefix];
            for (d, &w) in dst.iter_mut().zip(row) {
                *d += w;
            }
        }
    }
    VoteScores::new(scores)
}

/// Per-head selection budget: `floor(rate * prefix_len)` in rate mode,
/// `max_capacity_prompt - window_size` in capacity mode, clamped to
/// `[1, prefix_len]`.
pub fn capacity_k(config: &CompressionConfig, prefix_len: usize) -> Result<usize> {
    config.validate()?;
    if prefix_len == 0 {
        return Err(SnapError::Config("prefix_len must be >= 1".into()));
    }
    let k = match (config.max_capacity_prompt, config.compression_rate) {
        (Some(cap), None) => cap - config.window_size,
        (None, Some(rate)) => (rate * prefix_len as f64).floor() as usize,
        _ => unreachable!("validate pins exactly one driver"),
    };
    Ok(k.clamp(1, prefix_len))
}

/// Pools each head's scores, then returns the indices of the k largest
/// pooled values per head, sorted ascending. Ties break toward the lower
/// index.
pub fn select_topk<T: Element>(
    scores: &VoteScores<T>,
    k: usize,
    kernel: usize,
    pooling: PoolMode,
) -> Result<SelectedIndices> {
    let prefix = scores.prefix_len();
    if k == 0 || k > prefix {
        return Err(SnapError::Config(format!(
            "k = {k} out of range [1, {prefix}]"
        )));
    }
    let pooled = scores.scores.pool1d(kernel, pooling)?;
    let mut out = Vec::with_capacity(scores.heads());
    for h in 0..scores.heads() {
        let row = &pooled.data()[h * prefix..(h + 1) * prefix];
        let mut order: Vec<usize> = (0..prefix).collect();
        // Stable sort by descending score; equal scores keep ascending
        // index order, so the lowest index wins ties.
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).expect("finite pooled scores"));
        let mut kept: Vec<usize> = order[..k].to_vec();
        kept.sort_unstable();
        out.push(kept);
    }
    SelectedIndices::new(out, prefix)
}

/// Outcome of [`snap`]: the (possibly unchanged) cache plus the selection,
/// `None` when the prompt already fit the capacity.
#[derive(Debug, Clone)]
pub struct SnapResult<T> {
    pub cache: KvCache<T>,
    pub selected: Option<SelectedIndices>,
}

impl<T> SnapResult<T> {
    pub fn bypassed(&self) -> bool {
        self.selected.is_none()
    }
}

/// Compresses a full-prompt cache: prefix entries at the selected indices
/// (order preserved) concatenated with the last `window_size` entries.
/// Prompts shorter than the capacity are returned unchanged.
pub fn snap<T: Element>(
    cache: KvCache<T>,
    obs_weights: &Tensor<T>,
    config: &CompressionConfig,
) -> Result<SnapResult<T>> {
    config.validate()?;
    let l_prompt = cache.seq_len();
    if obs_weights.rank() != 3 || obs_weights.shape()[2] != l_prompt {
        return Err(SnapError::Shape(format!(
            "obs_weights {:?} inconsistent with cache length {l_prompt}",
            obs_weights.shape()
        )));
    }
    if obs_weights.shape()[0] != cache.num_kv_heads() {
        return Err(SnapError::Shape(format!(
            "obs_weights has {} heads, cache has {}",
            obs_weights.shape()[0],
            cache.num_kv_heads()
        )));
    }
    if l_prompt < config.effective_capacity(l_prompt) {
        return Ok(SnapResult {
            cache,
            selected: None,
        });
    }
    let window = config.window_size;
    let prefix = l_prompt - window;
    let k = capacity_k(config, prefix)?;
    let scores = vote(obs_weights, window)?;
    let selected = select_topk(&scores, k, config.kernel_size, config.pooling)?;

    let mut kept: Vec<Vec<usize>> = Vec::with_capacity(cache.num_kv_heads());
    for h in 0..cache.num_kv_heads() {
        let mut rows = selected.head(h).to_vec();
        rows.extend(prefix..l_prompt);
        kept.push(rows);
    }
    let compressed = cache.gather(&kept)?;
    Ok(SnapResult {
        cache: compressed,
        selected: Some(selected),
    })
}
