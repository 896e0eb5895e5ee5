//! Monte-Carlo experiment driver: per-episode evaluation, paired sweeps over
//! `r`, SNR and conductance variation, and the minimal-`r` search.
//!
//! Every episode is a pure function of `(spec, episode seed)`. Sweeps reuse
//! one seed list for all axis points, so points are compared on identical
//! episodes and identical standard-normal noise draws.

mod iso;
mod output;
mod sweep;

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{CodebookMode, LabelCodebook};
use crate::distributed::DistributedKeyMemory;
use crate::episodes::{sample_episode, EmbeddingBank, QuerySet, SupportSet};
use crate::error::{Error, Result};
use crate::local::{argmax, sharpen, LocalKVMemory, Sharpening};
use crate::noise::{add_white_noise_columns, map_matrix_to_devices, NoiseKind, NoiseSpec};
use crate::precision::{quantize_matrix, Precision};
use crate::rng::{self, Stream};

pub use iso::{find_iso_r, non_decreasing_in_mn, scaling_study, IsoOutcome, IsoRow, IsoSearch, ISO_TOLERANCE};
pub use output::{iso_table_csv, sweep_csv, sweep_json};
pub use sweep::{sweep_pcm, sweep_r, sweep_snr, SweepPoint, SweepResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryKind {
    Local,
    Distributed { r: usize },
}

/// How the label codebook of a distributed memory is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CodebookChoice {
    /// Orthogonal when `r >= m`, whitened otherwise.
    #[default]
    Auto,
    Fixed(CodebookMode),
}

impl CodebookChoice {
    pub fn resolve(self, r: usize, m: usize) -> CodebookMode {
        match self {
            CodebookChoice::Auto => CodebookMode::for_shape(r, m),
            CodebookChoice::Fixed(mode) => mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub memory: MemoryKind,
    pub precision: Precision,
    pub codebook: CodebookChoice,
    pub noise: NoiseSpec,
    pub m: usize,
    pub n: usize,
    pub queries_per_class: usize,
    pub episodes: usize,
    pub master_seed: u64,
    /// Quantize queries like the keys for bipolar/binary memories.
    pub quantize_query: bool,
    pub sharpening: Sharpening,
    pub binary_readout: BinaryReadout,
}

/// Readout of binary key memories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BinaryReadout {
    /// Plain dot products with the `{0, 1}` keys.
    Raw,
    /// Dot products with the keys offset by one half, `(W - 1/2) q`. This
    /// removes the query-dependent common mode `sum(q) / 2` shared by every
    /// similarity, which the label codes would otherwise spread unevenly
    /// across classes.
    #[default]
    Centered,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            memory: MemoryKind::Local,
            precision: Precision::Real,
            codebook: CodebookChoice::Auto,
            noise: NoiseSpec::none(),
            m: 20,
            n: 5,
            queries_per_class: 15,
            episodes: 1000,
            master_seed: 0,
            quantize_query: true,
            sharpening: Sharpening::Identity,
            binary_readout: BinaryReadout::Centered,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Parameter("episodes must be >= 1".into()));
        }
        if self.m == 0 || self.n == 0 || self.queries_per_class == 0 {
            return Err(Error::Parameter("m, n and queries per class must be >= 1".into()));
        }
        if let MemoryKind::Distributed { r } = self.memory {
            if r == 0 {
                return Err(Error::Parameter("r must be >= 1".into()));
            }
            if self.m < 2 {
                return Err(Error::Parameter("distributed memories need m >= 2".into()));
            }
            let mode = self.codebook.resolve(r, self.m);
            let ok = match mode {
                CodebookMode::Orthogonal => r >= self.m,
                CodebookMode::Whitened => r < self.m,
                CodebookMode::Walsh => r.is_power_of_two() && r >= self.m,
                CodebookMode::Gaussian => true,
            };
            if !ok {
                return Err(Error::Dimension(format!(
                    "{mode} codebook is incompatible with r = {r}, m = {}",
                    self.m
                )));
            }
        }
        if let NoiseKind::Pcm(params) = self.noise.kind {
            params.validate()?;
            if !self.precision.is_quantized() {
                return Err(Error::State("PCM noise requires a bipolar or binary memory".into()));
            }
        }
        Ok(())
    }

    pub fn mn(&self) -> usize {
        self.m * self.n
    }

    pub fn with_memory(&self, memory: MemoryKind) -> Self {
        Self { memory, ..self.clone() }
    }

    pub fn with_noise(&self, noise: NoiseSpec) -> Self {
        Self { noise, ..self.clone() }
    }

    /// Seeds of the shared episode list.
    pub fn episode_seeds(&self) -> Vec<u64> {
        (0..self.episodes as u64)
            .map(|i| rng::episode_seed(self.master_seed, i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_seed: u64,
    pub predictions: Vec<usize>,
    pub truth: Vec<usize>,
    pub correct: usize,
    pub accuracy: f64,
}

/// Mean accuracy over episodes with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStats {
    pub mean: f64,
    pub std_error: f64,
    pub episodes: usize,
}

impl AccuracyStats {
    /// Sequential reduction in episode order, so the result does not depend
    /// on how episodes were scheduled.
    pub fn from_accuracies(acc: &[f64]) -> Self {
        let k = acc.len();
        if k == 0 {
            return Self {
                mean: 0.0,
                std_error: 0.0,
                episodes: 0,
            };
        }
        let mean = acc.iter().sum::<f64>() / k as f64;
        let std_error = if k > 1 {
            let var = acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            (var / k as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_error,
            episodes: k,
        }
    }
}

/// Samples the episode of `episode_seed`, builds the requested memory,
/// applies the noise channel and classifies every query.
pub fn run_episode(bank: &EmbeddingBank, spec: &ExperimentSpec, episode_seed: u64) -> Result<EpisodeResult> {
    spec.validate()?;
    let mut sampling = rng::stream(episode_seed, Stream::Sampling);
    let (support, queries) = sample_episode(bank, spec.m, spec.n, spec.queries_per_class, &mut sampling)?;
    let scores = score_queries(spec, &support, &queries, episode_seed)?;
    let predictions: Vec<usize> = scores.column_iter().map(|c| argmax(c.as_slice())).collect();
    let correct = predictions.iter().zip(&queries.truth).filter(|(p, t)| p == t).count();
    Ok(EpisodeResult {
        episode_seed,
        accuracy: correct as f64 / predictions.len() as f64,
        predictions,
        truth: queries.truth,
        correct,
    })
}

/// `m x q` score matrix for the episode's queries.
fn score_queries(
    spec: &ExperimentSpec,
    support: &SupportSet,
    queries: &QuerySet,
    episode_seed: u64,
) -> Result<DMatrix<f64>> {
    let q = if spec.quantize_query && spec.precision.is_quantized() {
        quantize_matrix(&queries.queries, spec.precision)
    } else {
        queries.queries.clone()
    };
    let mut noise_rng = rng::stream(episode_seed ^ rng::mix64(spec.noise.seed), Stream::Noise);

    match spec.memory {
        MemoryKind::Local => {
            let memory = LocalKVMemory::build(support, spec.precision);
            let alpha = match spec.noise.kind {
                NoiseKind::Pcm(params) => {
                    let weights = map_matrix_to_devices(memory.keys(), spec.precision, &params, None, &mut noise_rng)?;
                    weights.tr_mul(&q)
                }
                _ => memory.similarities_batch(&q)?,
            };
            let alpha = binary_readout(spec, alpha, &q);
            let mut gamma = sharpen_columns(&alpha, spec.sharpening)?;
            if let NoiseKind::WhiteSnr { snr_db } = spec.noise.kind {
                add_white_noise_columns(&mut gamma, &alpha, snr_db, &mut noise_rng)?;
            }
            memory.class_scores_batch(&gamma)
        }
        MemoryKind::Distributed { r } => {
            let mode = spec.codebook.resolve(r, spec.m);
            let code_seed: u64 = rng::stream(episode_seed, Stream::Codebook).random();
            let codebook = Arc::new(LabelCodebook::new(r, spec.m, mode, code_seed)?);
            let mut memory = DistributedKeyMemory::build(support, codebook.clone())?;
            if spec.precision.is_quantized() {
                memory = memory.bipolarize(spec.precision)?;
            }
            let gamma = match spec.noise.kind {
                NoiseKind::Pcm(params) => {
                    let weights =
                        map_matrix_to_devices(memory.matrix(), spec.precision, &params, None, &mut noise_rng)?;
                    &weights * &q
                }
                _ => memory.matrix() * &q,
            };
            let mut gamma = binary_readout(spec, gamma, &q);
            if let NoiseKind::WhiteSnr { snr_db } = spec.noise.kind {
                let clean = gamma.clone();
                add_white_noise_columns(&mut gamma, &clean, snr_db, &mut noise_rng)?;
            }
            Ok(codebook.matrix().tr_mul(&gamma))
        }
    }
}

/// Applies [`BinaryReadout::Centered`] to a similarity matrix whose columns
/// belong to the query columns of `q`.
fn binary_readout(spec: &ExperimentSpec, mut sims: DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    if spec.precision == Precision::Binary && spec.binary_readout == BinaryReadout::Centered {
        for (mut col, query) in sims.column_iter_mut().zip(q.column_iter()) {
            let offset = 0.5 * query.sum();
            col.add_scalar_mut(-offset);
        }
    }
    sims
}

fn sharpen_columns(alpha: &DMatrix<f64>, sharpening: Sharpening) -> Result<DMatrix<f64>> {
    match sharpening {
        Sharpening::Identity => Ok(alpha.clone()),
        _ => {
            let mut out = alpha.clone();
            for j in 0..alpha.ncols() {
                let col = sharpen(&alpha.column(j).into_owned(), sharpening)?;
                out.column_mut(j).copy_from(&col);
            }
            Ok(out)
        }
    }
}

/// Runs every seed (in parallel) and returns results in seed order.
pub fn run_episodes(bank: &EmbeddingBank, spec: &ExperimentSpec, seeds: &[u64]) -> Result<Vec<EpisodeResult>> {
    spec.validate()?;
    seeds.par_iter().map(|&s| run_episode(bank, spec, s)).collect()
}

/// Mean accuracy of `spec` over the given episode seeds.
pub fn evaluate(bank: &EmbeddingBank, spec: &ExperimentSpec, seeds: &[u64]) -> Result<AccuracyStats> {
    spec.validate()?;
    let acc: Vec<f64> = seeds
        .par_iter()
        .map(|&s| run_episode(bank, spec, s).map(|r| r.accuracy))
        .collect::<Result<_>>()?;
    Ok(AccuracyStats::from_accuracies(&acc))
}

/// Noiseless original-memory accuracy on the template's episodes, the
/// reference level for iso-accuracy searches.
pub fn baseline_accuracy(bank: &EmbeddingBank, template: &ExperimentSpec) -> Result<AccuracyStats> {
    let spec = template.with_memory(MemoryKind::Local).with_noise(NoiseSpec::none());
    evaluate(bank, &spec, &template.episode_seeds())
}
