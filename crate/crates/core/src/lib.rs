//! Original and generalized key-value memories for few-shot classification,
//! with white-noise and phase-change-memory device simulation.
//!
//! The original memory keeps one key column per support vector and a
//! one-hot value memory. The generalized memory superposes outer products of
//! support vectors with `r`-dimensional class codes into a single `r x d`
//! matrix, so its size no longer depends on the number of support vectors.

pub mod codebook;
pub mod distributed;
pub mod episodes;
pub mod error;
pub mod harness;
pub mod local;
pub mod noise;
pub mod precision;
pub mod rng;

pub use codebook::{crosstalk, make_codebook, CodebookMode, LabelCodebook};
pub use distributed::{build_distributed, infer_distributed, DistributedKeyMemory};
pub use episodes::{
    generate_bank, import_bank, sample_episode, BankFormat, EmbeddingBank, GeneratorParams, PrototypeMode, QuerySet,
    SupportSet,
};
pub use error::{Error, Result};
pub use local::{build_local, knn_oracle, sharpen, ClassScores, LocalKVMemory, Sharpening};
pub use noise::{
    add_white_noise, default_pcm_params, map_to_devices, sample_conductance, NoiseKind, NoiseSpec, PcmParams,
};
pub use precision::{quantize, Precision};
