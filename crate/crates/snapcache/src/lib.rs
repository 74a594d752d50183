//! A self-contained KV-cache compression engine for decoder-only
//! attention, built around observation-window voting: the last few
//! prompt queries vote on which earlier key/value entries matter, the
//! votes are smoothed with a 1-D pooling pass, and only the top-scoring
//! entries (plus the window itself) survive into decoding.
//!
//! The crate ships the numeric kernels ([`tensor`]), a minimal
//! multi-head attention runtime with rotary embeddings ([`attention`]),
//! the compression engine itself ([`snapkv`]), hit-rate and overlap
//! metrics ([`metrics`]), a tiny deterministic transformer for
//! end-to-end checks ([`model`]), synthetic workloads ([`synth`]), a
//! latency/memory benchmark harness ([`bench`]) and a CLI ([`cli`]).
//!
//! See the `examples/` directory for one runnable example per
//! capability.

pub mod attention;
pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod snapkv;
pub mod synth;
pub mod tensor;

pub use attention::{AttentionConfig, KvCache};
pub use bench::{BenchRecord, Mode, SweepConfig};
pub use config::RunConfig;
pub use error::{Result, SnapError};
pub use metrics::{FeatureMask, HitRate, HitRateReport};
pub use model::{init_model, Model, ModelConfig};
pub use snapkv::{snap, CompressionConfig, SelectedIndices, SnapResult, VoteScores};
pub use tensor::{Element, PoolMode, Precision, Tensor};
