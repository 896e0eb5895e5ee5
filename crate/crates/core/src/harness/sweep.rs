use serde::{Deserialize, Serialize};

use super::{evaluate, AccuracyStats, ExperimentSpec, MemoryKind};
use crate::episodes::EmbeddingBank;
use crate::error::{Error, Result};
use crate::noise::{NoiseKind, NoiseSpec, PcmParams};

/// One evaluated point: a memory configuration (`series`) at one axis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub series: String,
    pub axis: f64,
    pub mean_accuracy: f64,
    pub std_error: f64,
    pub episodes: usize,
}

impl SweepPoint {
    fn new(series: impl Into<String>, axis: f64, stats: AccuracyStats) -> Self {
        Self {
            series: series.into(),
            axis,
            mean_accuracy: stats.mean,
            std_error: stats.std_error,
            episodes: stats.episodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// `r`, `snr_db` or `variation`.
    pub axis_name: String,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn get(&self, series: &str, axis: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.series == series && p.axis == axis)
    }

    pub fn series(&self, series: &str) -> Vec<&SweepPoint> {
        self.points.iter().filter(|p| p.series == series).collect()
    }
}

pub(crate) fn series_label(memory: MemoryKind) -> String {
    match memory {
        MemoryKind::Local => "local".to_string(),
        MemoryKind::Distributed { r } => format!("r={r}"),
    }
}

/// Accuracy against `r` (template noise applies). The original memory is
/// reported as series `local` at axis value `mn`; distributed points form
/// series `distributed`.
pub fn sweep_r(bank: &EmbeddingBank, template: &ExperimentSpec, r_values: &[usize]) -> Result<SweepResult> {
    if r_values.contains(&0) {
        return Err(Error::Parameter("r values must be positive".into()));
    }
    let seeds = template.episode_seeds();
    let mut points = Vec::with_capacity(r_values.len() + 1);
    let local = evaluate(bank, &template.with_memory(MemoryKind::Local), &seeds)?;
    points.push(SweepPoint::new("local", template.mn() as f64, local));
    for &r in r_values {
        let stats = evaluate(bank, &template.with_memory(MemoryKind::Distributed { r }), &seeds)?;
        points.push(SweepPoint::new("distributed", r as f64, stats));
    }
    Ok(SweepResult {
        axis_name: "r".into(),
        points,
    })
}

/// Accuracy against the SNR of the white noise added to the similarity
/// vector, for the original memory and every `r`.
pub fn sweep_snr(
    bank: &EmbeddingBank,
    template: &ExperimentSpec,
    snr_values: &[f64],
    r_values: &[usize],
) -> Result<SweepResult> {
    let seeds = template.episode_seeds();
    let memories = memories(r_values)?;
    let mut points = Vec::new();
    for &snr in snr_values {
        let noise = NoiseSpec {
            kind: NoiseKind::WhiteSnr { snr_db: snr },
            seed: template.noise.seed,
        };
        for &memory in &memories {
            let spec = template.with_memory(memory).with_noise(noise);
            points.push(SweepPoint::new(
                series_label(memory),
                snr,
                evaluate(bank, &spec, &seeds)?,
            ));
        }
    }
    Ok(SweepResult {
        axis_name: "snr_db".into(),
        points,
    })
}

/// Accuracy against the relative programming-noise SD of the PCM model, for
/// the original memory and every `r`. Other device parameters come from the
/// template's PCM noise, or the measured defaults.
pub fn sweep_pcm(
    bank: &EmbeddingBank,
    template: &ExperimentSpec,
    variations: &[f64],
    r_values: &[usize],
) -> Result<SweepResult> {
    if !template.precision.is_quantized() {
        return Err(Error::State("PCM sweeps require a bipolar or binary memory".into()));
    }
    let base = pcm_params(template);
    let seeds = template.episode_seeds();
    let memories = memories(r_values)?;
    let mut points = Vec::new();
    for &v in variations {
        let noise = NoiseSpec {
            kind: NoiseKind::Pcm(PcmParams {
                g_prog_rel_sd: v,
                ..base
            }),
            seed: template.noise.seed,
        };
        for &memory in &memories {
            let spec = template.with_memory(memory).with_noise(noise);
            points.push(SweepPoint::new(series_label(memory), v, evaluate(bank, &spec, &seeds)?));
        }
    }
    Ok(SweepResult {
        axis_name: "variation".into(),
        points,
    })
}

pub(crate) fn pcm_params(template: &ExperimentSpec) -> PcmParams {
    match template.noise.kind {
        NoiseKind::Pcm(p) => p,
        _ => PcmParams::default(),
    }
}

fn memories(r_values: &[usize]) -> Result<Vec<MemoryKind>> {
    if r_values.contains(&0) {
        return Err(Error::Parameter("r values must be positive".into()));
    }
    Ok(std::iter::once(MemoryKind::Local)
        .chain(r_values.iter().map(|&r| MemoryKind::Distributed { r }))
        .collect())
}
