//! A small latency/memory sweep: baseline decoding slows down as the
//! prompt grows, the compressed cache holds latency and memory flat.
//! (The acceptance suite runs the full 1k-16k grid; this keeps the
//! example under a minute.)

use snapcache::bench::{records_csv, run_sweep, Mode, SweepConfig};
use snapcache::model::ModelConfig;
use snapcache::snapkv::CompressionConfig;
use snapcache::tensor::Precision;

fn main() -> snapcache::Result<()> {
    let sweep = SweepConfig {
        prompt_lengths: vec![512, 1024, 2048],
        batch_sizes: vec![1],
        gen_len: 32,
        repeats: 3,
        warmup: 1,
        modes: vec![Mode::Baseline, Mode::SnapKv],
        compression: CompressionConfig::with_capacity(16, 512),
        model: ModelConfig {
            vocab: 512,
            d_model: 128,
            layers: 2,
            num_heads: 2,
            num_kv_heads: 2,
            head_dim: 64,
            mlp_hidden: 256,
            seed: 42,
            precision: Precision::F32,
        },
        seed: 42,
        mem_budget_bytes: None,
        include_prefill: false,
    };
    let records = run_sweep::<f32>(&sweep)?;
    print!("{}", records_csv(&records));
    Ok(())
}
