//! Hit-rate and overlap machinery: boolean feature masks over the
//! per-head prefix grid, the hit-rate ratio between "important" and
//! "selected" masks, and layer-wise overlap profiles between per-window
//! selections and the selection actually used by generation.

use crate::error::{Result, SnapError};
use crate::snapkv::{select_topk, SelectedIndices, VoteScores};
use crate::tensor::{Element, Tensor};

/// Boolean grid `[heads, prefix_len]` marking attention features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMask {
    heads: usize,
    prefix_len: usize,
    mask: Vec<bool>,
}

impl FeatureMask {
    pub fn new(heads: usize, prefix_len: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != heads * prefix_len {
            return Err(SnapError::Shape(format!(
                "mask of {} entries does not fill a {heads} x {prefix_len} grid",
                mask.len()
            )));
        }
        Ok(Self {
            heads,
            prefix_len,
            mask,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    pub fn get(&self, head: usize, pos: usize) -> bool {
        self.mask[head * self.prefix_len + pos]
    }

    pub fn row(&self, head: usize) -> &[bool] {
        &self.mask[head * self.prefix_len..(head + 1) * self.prefix_len]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn not(&self) -> Self {
        Self {
            heads: self.heads,
            prefix_len: self.prefix_len,
            mask: self.mask.iter().map(|b| !b).collect(),
        }
    }
}

/// Hit-rate value plus a flag for the vacuous (no important features)
/// convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitRate {
    pub value: f64,
    /// True when the important mask was empty and the value defaulted
    /// to 1.0.
    pub vacuous: bool,
}

/// Per-layer, per-head hit rates at one threshold.
#[derive(Debug, Clone)]
pub struct HitRateReport {
    pub per_layer: Vec<Vec<f64>>,
    pub theta: f64,
    pub aggregate: f64,
}

impl HitRateReport {
    pub fn new(per_layer: Vec<Vec<f64>>, theta: f64) -> Self {
        let mut sum = 0.0;
        let mut n = 0usize;
        for layer in &per_layer {
            for &h in layer {
                sum += h;
                n += 1;
            }
        }
        let aggregate = if n == 0 { 0.0 } else { sum / n as f64 };
        Self {
            per_layer,
            theta,
            aggregate,
        }
    }
}

/// Mask that is true exactly at the selected (head, position) pairs.
pub fn vote_mask(indices: &SelectedIndices, prefix_len: usize, heads: usize) -> Result<FeatureMask> {
    if indices.heads() != heads {
        return Err(SnapError::Shape(format!(
            "selection has {} heads, mask expects {heads}",
            indices.heads()
        )));
    }
    let mut mask = vec![false; heads * prefix_len];
    for h in 0..heads {
        for &i in indices.head(h) {
            if i >= prefix_len {
                return Err(SnapError::Shape(format!(
                    "index {i} out of prefix range {prefix_len}"
                )));
            }
            mask[h * prefix_len + i] = true;
        }
    }
    FeatureMask::new(heads, prefix_len, mask)
}

/// Elementwise strict `a_cur > theta` over `[heads, prefix_len]`.
pub fn threshold_mask<T: Element>(a_cur: &Tensor<T>, theta: f64) -> Result<FeatureMask> {
    if a_cur.rank() != 2 {
        return Err(SnapError::Shape(format!(
            "threshold_mask expects [heads, prefix], got {:?}",
            a_cur.shape()
        )));
    }
    if theta < 0.0 {
        return Err(SnapError::Config(format!(
            "theta must be nonnegative, got {theta}"
        )));
    }
    let mask = a_cur.data().iter().map(|v| v.as_f64() > theta).collect();
    FeatureMask::new(a_cur.shape()[0], a_cur.shape()[1], mask)
}

/// `|important AND selected| / |important|`. An empty important mask is
/// vacuously satisfied: value 1.0 with the `vacuous` flag set.
pub fn hit_rate(important: &FeatureMask, selected: &FeatureMask) -> Result<HitRate> {
    if important.heads != selected.heads || important.prefix_len != selected.prefix_len {
        return Err(SnapError::Shape(format!(
            "mask shapes differ: {}x{} vs {}x{}",
            important.heads, important.prefix_len, selected.heads, selected.prefix_len
        )));
    }
    let mut overlap = 0usize;
    let mut total = 0usize;
    for (a, b) in important.mask.iter().zip(&selected.mask) {
        if *a {
            total += 1;
            if *b {
                overlap += 1;
            }
        }
    }
    if total == 0 {
        return Ok(HitRate {
            value: 1.0,
            vacuous: true,
        });
    }
    Ok(HitRate {
        value: overlap as f64 / total as f64,
        vacuous: false,
    })
}

/// One overlap measurement: a prompt window's selection compared with the
/// reference (generation) selection, for one layer and head.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapRow {
    pub layer: usize,
    pub head: usize,
    /// 0 is the earliest window; the highest index is the window at the
    /// prompt's end.
    pub window_index: usize,
    pub overlap: f64,
}

/// Per-layer overlap curves between top-k voting masks built from each
/// prompt window and the mask built from the generation queries.
///
/// `attn_layers` holds, per layer, the causal attention grid
/// `[heads, prompt_len + gen_len, prompt_len + gen_len]` (rows are
/// queries, columns keys). With `gen_len == 0` the reference selection is
/// the last prompt window itself.
pub fn window_overlap_profile<T: Element>(
    attn_layers: &[Tensor<T>],
    prompt_len: usize,
    gen_len: usize,
    window: usize,
    k: usize,
) -> Result<Vec<OverlapRow>> {
    if window == 0 || window > prompt_len {
        return Err(SnapError::Config(format!(
            "window {window} out of range for prompt length {prompt_len}"
        )));
    }
    let prefix = prompt_len - window;
    if prefix == 0 {
        return Err(SnapError::Config(
            "window covers the whole prompt; no prefix to score".into(),
        ));
    }
    if k == 0 || k > prefix {
        return Err(SnapError::Config(format!("k = {k} out of range [1, {prefix}]")));
    }
    let total = prompt_len + gen_len;
    let n_windows = prompt_len / window;
    let mut rows = Vec::new();
    for (layer, attn) in attn_layers.iter().enumerate() {
        if attn.rank() != 3 || attn.shape()[1] != total || attn.shape()[2] != total {
            return Err(SnapError::Shape(format!(
                "layer {layer}: attention grid {:?} does not match total length {total}",
                attn.shape()
            )));
        }
        let heads = attn.shape()[0];
        let select = |row_start: usize, row_end: usize| -> Result<FeatureMask> {
            let scores = vote_over_rows(attn, row_start, row_end, prefix)?;
            let sel = select_topk(&scores, k, 1, crate::tensor::PoolMode::Max)?;
            vote_mask(&sel, prefix, heads)
        };
        let reference = if gen_len > 0 {
            select(prompt_len, total)?
        } else {
            select(prompt_len - window, prompt_len)?
        };
        for w in 0..n_windows {
            // Windows tile the prompt from the end.
            let end = prompt_len - (n_windows - 1 - w) * window;
            let mask = select(end - window, end)?;
            for h in 0..heads {
                let imp = single_head(&reference, h);
                let sel = single_head(&mask, h);
                rows.push(OverlapRow {
                    layer,
                    head: h,
                    window_index: w,
                    overlap: hit_rate(&imp, &sel)?.value,
                });
            }
        }
    }
    Ok(rows)
}

/// CSV table of overlap rows, header `layer,head,window_index,overlap`.
pub fn overlap_csv(rows: &[OverlapRow]) -> String {
    let mut out = String::from("layer,head,window_index,overlap\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.layer, r.head, r.window_index, r.overlap
        ));
    }
    out
}

fn single_head(mask: &FeatureMask, head: usize) -> FeatureMask {
    FeatureMask::new(1, mask.prefix_len(), mask.row(head).to_vec()).expect("row-sized mask")
}

fn vote_over_rows<T: Element>(
    attn: &Tensor<T>,
    row_start: usize,
    row_end: usize,
    prefix: usize,
) -> Result<VoteScores<T>> {
    let heads = attn.shape()[0];
    let total = attn.shape()[2];
    let mut scores = Tensor::zeros(vec![heads, prefix]);
    for h in 0..heads {
        let dst = &mut scores.data_mut()[h * prefix..(h + 1) * prefix];
        for r in row_start..row_end {
            let row = &attn.data()[(h * attn.shape()[1] + r) * total..][..prefix];
            for (d, &w) in dst.iter_mut().zip(row) {
                *d += w;
            }
        }
    }
    VoteScores::new(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(heads: usize, prefix: usize, bits: &[bool]) -> FeatureMask {
        FeatureMask::new(heads, prefix, bits.to_vec()).unwrap()
    }

    #[test]
    fn vote_mask_single_index() {
        let sel = SelectedIndices::new(vec![vec![2]], 4).unwrap();
        let m = vote_mask(&sel, 4, 1).unwrap();
        assert_eq!(m.row(0), &[false, false, true, false]);
    }

    #[test]
    fn vote_mask_empty_selection() {
        let sel = SelectedIndices::new(vec![vec![]], 4).unwrap();
        let m = vote_mask(&sel, 4, 1).unwrap();
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn threshold_mask_strict() {
        let a = Tensor::new(vec![1, 2], vec![0.1, 0.5]).unwrap();
        let m = threshold_mask(&a, 0.3).unwrap();
        assert_eq!(m.row(0), &[false, true]);
        // theta exactly equal to an entry: strict comparison excludes it
        let m = threshold_mask(&a, 0.5).unwrap();
        assert_eq!(m.row(0), &[false, false]);
    }

    #[test]
    fn threshold_zero_on_softmax_is_all_true() {
        let a = Tensor::new(vec![1, 3], vec![0.2, 0.5, 0.3]).unwrap();
        let m = threshold_mask(&a, 0.0).unwrap();
        assert_eq!(m.count(), 3);
    }

    #[test]
    fn hit_rate_hand_counted() {
        let imp = mask(1, 4, &[true, true, false, false]);
        let sel = mask(1, 4, &[true, false, true, false]);
        assert_eq!(hit_rate(&imp, &sel).unwrap().value, 0.5);
    }

    #[test]
    fn hit_rate_identity_and_complement() {
        let m = mask(1, 4, &[true, false, true, false]);
        assert_eq!(hit_rate(&m, &m).unwrap().value, 1.0);
        assert_eq!(hit_rate(&m, &m.not()).unwrap().value, 0.0);
    }

    #[test]
    fn hit_rate_vacuous_convention() {
        let imp = mask(1, 3, &[false, false, false]);
        let sel = mask(1, 3, &[true, false, false]);
        let h = hit_rate(&imp, &sel).unwrap();
        assert_eq!(h.value, 1.0);
        assert!(h.vacuous);
    }

    #[test]
    fn hit_rate_scale_free() {
        let a = Tensor::new(vec![1, 4], vec![0.1, 0.02, 0.4, 0.25]).unwrap();
        let base = threshold_mask(&a, 0.05).unwrap();
        for c in [0.5, 2.0, 10.0] {
            let scaled: Vec<f64> = a.data().iter().map(|v| v * c).collect();
            let at =
                threshold_mask(&Tensor::new(vec![1, 4], scaled).unwrap(), 0.05 * c).unwrap();
            assert_eq!(base, at);
        }
    }

    #[test]
    fn hit_rate_monotone_in_selection() {
        let imp = mask(1, 4, &[true, true, true, false]);
        let small = mask(1, 4, &[true, false, false, false]);
        let large = mask(1, 4, &[true, true, false, true]);
        assert!(
            hit_rate(&imp, &large).unwrap().value >= hit_rate(&imp, &small).unwrap().value
        );
    }

    #[test]
    fn report_aggregate_is_mean() {
        let r = HitRateReport::new(vec![vec![1.0, 0.5], vec![0.5, 0.0]], 0.02);
        assert!((r.aggregate - 0.5).abs() < 1e-15);
    }

    #[test]
    fn overlap_last_window_vs_itself_is_one() {
        // Random-ish attention, gen_len 0: the reference is the last
        // window, so the last window's overlap is exactly 1 everywhere.
        let prompt = 12;
        let window = 3;
        let mut data = vec![0.0f64; prompt * prompt];
        for t in 0..prompt {
            for s in 0..=t {
                data[t * prompt + s] = 1.0 / (t + 1) as f64;
            }
        }
        let attn = Tensor::new(vec![1, prompt, prompt], data).unwrap();
        let rows = window_overlap_profile(&[attn], prompt, 0, window, 4).unwrap();
        let last = rows.iter().max_by_key(|r| r.window_index).unwrap();
        assert_eq!(last.overlap, 1.0);
    }

    #[test]
    fn overlap_saturates_when_k_is_prefix() {
        let prompt = 8;
        let window = 2;
        let prefix = prompt - window;
        let mut data = vec![0.0f64; prompt * prompt];
        for t in 0..prompt {
            for s in 0..=t {
                data[t * prompt + s] = 1.0 / (t + 1) as f64;
            }
        }
        let attn = Tensor::new(vec![1, prompt, prompt], data).unwrap();
        let rows = window_overlap_profile(&[attn], prompt, 0, window, prefix).unwrap();
        assert!(rows.iter().all(|r| r.overlap == 1.0));
    }

    #[test]
    fn overlap_rejects_oversized_window() {
        let attn = Tensor::<f64>::zeros(vec![1, 4, 4]);
        assert!(matches!(
            window_overlap_profile(&[attn], 4, 0, 5, 1),
            Err(SnapError::Config(_))
        ));
    }
}
