use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::sweep::pcm_params;
use super::{baseline_accuracy, evaluate, ExperimentSpec, MemoryKind};
use crate::episodes::EmbeddingBank;
use crate::error::{Error, Result};
use crate::noise::{NoiseKind, NoiseSpec, PcmParams};

/// Accuracy slack, as a fraction, allowed below the baseline (0.25 percentage points).
pub const ISO_TOLERANCE: f64 = 0.0025;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum IsoOutcome {
    Reached {
        r: usize,
        accuracy: f64,
    },
    /// No `r <= r_max` met the threshold; `best_*` is the best candidate tried.
    Unreached {
        r_max: usize,
        best_r: usize,
        best_accuracy: f64,
    },
}

impl IsoOutcome {
    pub fn r(&self) -> Option<usize> {
        match *self {
            IsoOutcome::Reached { r, .. } => Some(r),
            IsoOutcome::Unreached { .. } => None,
        }
    }
}

/// Search trace: every evaluated candidate and the outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoSearch {
    pub threshold: f64,
    pub evaluated: BTreeMap<usize, f64>,
    pub outcome: IsoOutcome,
}

/// Smallest `r` whose PCM-noisy distributed accuracy (at programming-noise
/// SD `variation`) reaches `baseline - ISO_TOLERANCE` on the template's
/// shared episodes. Doubles from `r = 1` until the threshold is met, then
/// bisects between the last failing and first passing candidates.
pub fn find_iso_r(
    bank: &EmbeddingBank,
    template: &ExperimentSpec,
    variation: f64,
    baseline: f64,
    r_max: usize,
) -> Result<IsoSearch> {
    if !(baseline > 0.0 && baseline <= 1.0) {
        return Err(Error::Parameter(format!("baseline must lie in (0, 1], got {baseline}")));
    }
    if r_max == 0 {
        return Err(Error::Parameter("r_max must be >= 1".into()));
    }
    let noise = NoiseSpec {
        kind: NoiseKind::Pcm(PcmParams {
            g_prog_rel_sd: variation,
            ..pcm_params(template)
        }),
        seed: template.noise.seed,
    };
    let template = template.with_noise(noise);
    let seeds = template.episode_seeds();
    let threshold = baseline - ISO_TOLERANCE;
    let mut evaluated = BTreeMap::new();
    let mut accuracy = |r: usize| -> Result<f64> {
        if let Some(&a) = evaluated.get(&r) {
            return Ok(a);
        }
        let a = evaluate(bank, &template.with_memory(MemoryKind::Distributed { r }), &seeds)?.mean;
        evaluated.insert(r, a);
        Ok(a)
    };

    let mut failing = 0usize;
    let mut r = 1usize;
    let passing = loop {
        if accuracy(r)? >= threshold {
            break r;
        }
        if r >= r_max {
            let (best_r, best_accuracy) =
                evaluated.iter().fold(
                    (0, f64::NEG_INFINITY),
                    |(br, ba), (&k, &a)| if a > ba { (k, a) } else { (br, ba) },
                );
            return Ok(IsoSearch {
                threshold,
                outcome: IsoOutcome::Unreached {
                    r_max,
                    best_r,
                    best_accuracy,
                },
                evaluated,
            });
        }
        failing = r;
        r = (2 * r).min(r_max);
    };

    let (mut lo, mut hi) = (failing, passing);
    while hi - lo > 1 && lo > 0 {
        let mid = lo + (hi - lo) / 2;
        if accuracy(mid)? >= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let acc = accuracy(hi)?;
    Ok(IsoSearch {
        threshold,
        outcome: IsoOutcome::Reached { r: hi, accuracy: acc },
        evaluated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoRow {
    pub m: usize,
    pub n: usize,
    pub variation: f64,
    pub baseline: f64,
    pub outcome: IsoOutcome,
}

/// Iso-`r` for every problem size and variation. The baseline of each size is
/// the noiseless original memory (template precision) on that size's episodes.
/// `r_max_factor` bounds the search at `r_max_factor * mn`.
pub fn scaling_study(
    bank: &EmbeddingBank,
    template: &ExperimentSpec,
    sizes: &[(usize, usize)],
    variations: &[f64],
    r_max_factor: usize,
) -> Result<Vec<IsoRow>> {
    let mut rows = Vec::with_capacity(sizes.len() * variations.len());
    for &(m, n) in sizes {
        let spec = ExperimentSpec {
            m,
            n,
            ..template.clone()
        };
        let baseline = baseline_accuracy(bank, &spec)?.mean;
        for &variation in variations {
            let search = find_iso_r(bank, &spec, variation, baseline, r_max_factor.max(1) * m * n)?;
            rows.push(IsoRow {
                m,
                n,
                variation,
                baseline,
                outcome: search.outcome,
            });
        }
    }
    Ok(rows)
}

/// Whether reached iso-`r` values never decrease as `mn` grows, at every variation.
pub fn non_decreasing_in_mn(rows: &[IsoRow]) -> bool {
    let mut by_variation: BTreeMap<u64, Vec<(usize, Option<usize>)>> = BTreeMap::new();
    for row in rows {
        by_variation
            .entry(row.variation.to_bits())
            .or_default()
            .push((row.m * row.n, row.outcome.r()));
    }
    by_variation.values_mut().all(|v| {
        v.sort_by_key(|&(mn, _)| mn);
        v.windows(2).all(|w| match (w[0].1, w[1].1) {
            (Some(a), Some(b)) => a <= b,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => true,
        })
    })
}
