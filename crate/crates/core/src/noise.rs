//! Nonideality channels: additive white noise on the similarity vector at a
//! target SNR, and a phase-change-memory conductance model for key memories
//! mapped onto devices.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributed::DistributedKeyMemory;
use crate::error::{Error, Result};
use crate::local::LocalKVMemory;
use crate::precision::Precision;
use crate::rng::Rng;

/// Conductance model of a single PCM device programmed to the set state:
///
/// `G(t) = N(0, g_read_sd^2) + g0 * N(1, g_prog_rel_sd^2) * t^(-nu * N(1, nu_rel_sd^2))`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcmParams {
    /// Seconds since programming.
    pub t: f64,
    /// Mean conductance at t = 1 s, siemens.
    pub g0: f64,
    /// Mean drift exponent.
    pub nu: f64,
    /// Additive read-noise SD, siemens.
    pub g_read_sd: f64,
    /// Relative programming-noise SD (fraction of g0).
    pub g_prog_rel_sd: f64,
    /// Relative SD of the drift exponent.
    pub nu_rel_sd: f64,
}

impl Default for PcmParams {
    fn default() -> Self {
        Self {
            t: 20.0,
            g0: 22.8e-6,
            nu: 0.0598,
            g_read_sd: 0.496e-6,
            g_prog_rel_sd: 0.317,
            nu_rel_sd: 0.0907,
        }
    }
}

/// Measured device parameters, evaluated 20 s after programming.
pub fn default_pcm_params() -> PcmParams {
    PcmParams::default()
}

impl PcmParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.t,
            self.g0,
            self.nu,
            self.g_read_sd,
            self.g_prog_rel_sd,
            self.nu_rel_sd,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Parameter("PCM parameters must be finite".into()));
        }
        if self.t <= 0.0 || self.g0 <= 0.0 {
            return Err(Error::Parameter(format!(
                "PCM model needs t > 0 and g0 > 0, got t = {}, g0 = {}",
                self.t, self.g0
            )));
        }
        if self.nu < 0.0 || self.g_read_sd < 0.0 || self.g_prog_rel_sd < 0.0 || self.nu_rel_sd < 0.0 {
            return Err(Error::Parameter("PCM drift exponent and SDs must be >= 0".into()));
        }
        Ok(())
    }

    /// Copy with every noise SD set to zero.
    pub fn noiseless(self) -> Self {
        Self {
            g_read_sd: 0.0,
            g_prog_rel_sd: 0.0,
            nu_rel_sd: 0.0,
            ..self
        }
    }

    /// Mean set conductance after drift, `g0 * t^-nu`.
    pub fn nominal_set_conductance(&self) -> f64 {
        self.g0 * (-self.nu * self.t.ln()).exp()
    }

    /// `E[G]`: the drift exponent is Gaussian, so `t^(-nu Z)` is lognormal.
    pub fn mean_conductance(&self) -> f64 {
        let s = self.nu * self.nu_rel_sd * self.t.ln();
        self.nominal_set_conductance() * (0.5 * s * s).exp()
    }

    #[inline]
    fn set_device(&self, ln_t: f64, z_read: f64, z_prog: f64, z_drift: f64) -> f64 {
        let programmed = self.g0 * (1.0 + self.g_prog_rel_sd * z_prog);
        let drift = (-(self.nu * (1.0 + self.nu_rel_sd * z_drift)) * ln_t).exp();
        self.g_read_sd * z_read + programmed * drift
    }
}

/// One draw of the set-state conductance, in siemens. Uses three independent
/// standard normals; the result may be negative.
pub fn sample_conductance(params: &PcmParams, rng: &mut Rng) -> f64 {
    let z_read: f64 = StandardNormal.sample(rng);
    let z_prog: f64 = StandardNormal.sample(rng);
    let z_drift: f64 = StandardNormal.sample(rng);
    params.set_device(params.t.ln(), z_read, z_prog, z_drift)
}

/// Quantized key matrices that can be programmed into devices.
pub trait DeviceMappable {
    fn device_matrix(&self) -> &DMatrix<f64>;
    fn device_precision(&self) -> Precision;
}

impl DeviceMappable for DistributedKeyMemory {
    fn device_matrix(&self) -> &DMatrix<f64> {
        self.matrix()
    }

    fn device_precision(&self) -> Precision {
        self.precision()
    }
}

impl DeviceMappable for LocalKVMemory {
    fn device_matrix(&self) -> &DMatrix<f64> {
        self.keys()
    }

    fn device_precision(&self) -> Precision {
        self.precision()
    }
}

/// Programs a quantized key matrix into PCM devices and reads back unitless
/// effective weights (conductance over `g0 * t^-nu`).
///
/// Binary: `1` is one set device, `0` one reset device. Bipolar: two devices
/// per entry, `+1 -> (set, reset)`, `-1 -> (reset, set)`, weight `G+ - G-`.
/// A reset device contributes read noise only. `g_prog_rel_sd` replaces the
/// programming-noise SD of `params` when given.
pub fn map_to_devices<M: DeviceMappable + ?Sized>(
    memory: &M,
    params: &PcmParams,
    g_prog_rel_sd: Option<f64>,
    rng: &mut Rng,
) -> Result<DMatrix<f64>> {
    map_matrix_to_devices(
        memory.device_matrix(),
        memory.device_precision(),
        params,
        g_prog_rel_sd,
        rng,
    )
}

pub fn map_matrix_to_devices(
    matrix: &DMatrix<f64>,
    precision: Precision,
    params: &PcmParams,
    g_prog_rel_sd: Option<f64>,
    rng: &mut Rng,
) -> Result<DMatrix<f64>> {
    let mut params = *params;
    if let Some(v) = g_prog_rel_sd {
        params.g_prog_rel_sd = v;
    }
    params.validate()?;
    let ln_t = params.t.ln();
    let nominal = params.nominal_set_conductance();

    let set = |rng: &mut Rng| {
        let z_read: f64 = StandardNormal.sample(rng);
        let z_prog: f64 = StandardNormal.sample(rng);
        let z_drift: f64 = StandardNormal.sample(rng);
        params.set_device(ln_t, z_read, z_prog, z_drift)
    };
    let reset = |rng: &mut Rng| {
        let z: f64 = StandardNormal.sample(rng);
        params.g_read_sd * z
    };

    let mut out = DMatrix::zeros(matrix.nrows(), matrix.ncols());
    match precision {
        Precision::Real => {
            return Err(Error::State(
                "only bipolar or binary key memories can be mapped to devices".into(),
            ))
        }
        Precision::Binary => {
            for (w, &x) in out.iter_mut().zip(matrix.iter()) {
                let g = if x == 1.0 {
                    set(rng)
                } else if x == 0.0 {
                    reset(rng)
                } else {
                    return Err(Error::Validation(format!("binary memory holds entry {x}")));
                };
                *w = g / nominal;
            }
        }
        Precision::Bipolar => {
            for (w, &x) in out.iter_mut().zip(matrix.iter()) {
                let (plus, minus) = if x == 1.0 {
                    let p = set(rng);
                    (p, reset(rng))
                } else if x == -1.0 {
                    let p = reset(rng);
                    (p, set(rng))
                } else {
                    return Err(Error::Validation(format!("bipolar memory holds entry {x}")));
                };
                *w = (plus - minus) / nominal;
            }
        }
    }
    Ok(out)
}

/// Adds i.i.d. Gaussian noise with variance `P / 10^(snr_db / 10)`, where `P`
/// is the mean square of `alpha_reference`. An infinite SNR returns `gamma`.
pub fn add_white_noise(
    gamma: &DVector<f64>,
    alpha_reference: &DVector<f64>,
    snr_db: f64,
    rng: &mut Rng,
) -> Result<DVector<f64>> {
    let sigma = white_noise_sd(alpha_reference.as_slice(), snr_db)?;
    let mut out = gamma.clone();
    if sigma > 0.0 {
        for x in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *x += sigma * z;
        }
    }
    Ok(out)
}

/// Column-wise [`add_white_noise`]: column `j` of `gamma` is calibrated on
/// column `j` of `alpha_reference`.
pub fn add_white_noise_columns(
    gamma: &mut DMatrix<f64>,
    alpha_reference: &DMatrix<f64>,
    snr_db: f64,
    rng: &mut Rng,
) -> Result<()> {
    if gamma.ncols() != alpha_reference.ncols() {
        return Err(Error::Dimension(format!(
            "{} noisy columns against {} reference columns",
            gamma.ncols(),
            alpha_reference.ncols()
        )));
    }
    for j in 0..gamma.ncols() {
        let reference = alpha_reference.column(j);
        let sigma = white_noise_sd(reference.as_slice(), snr_db)?;
        if sigma > 0.0 {
            for x in gamma.column_mut(j).iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *x += sigma * z;
            }
        }
    }
    Ok(())
}

fn white_noise_sd(reference: &[f64], snr_db: f64) -> Result<f64> {
    if snr_db.is_nan() {
        return Err(Error::Parameter("SNR is NaN".into()));
    }
    if reference.is_empty() || reference.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("reference vector must be finite and nonempty".into()));
    }
    let power = reference.iter().map(|x| x * x).sum::<f64>() / reference.len() as f64;
    if power == 0.0 {
        return Err(Error::DegenerateSignal);
    }
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    Ok((power / 10f64.powf(snr_db / 10.0)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    None,
    WhiteSnr {
        snr_db: f64,
    },
    Pcm(PcmParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Mixed into every episode's noise stream.
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn white(snr_db: f64) -> Self {
        Self {
            kind: NoiseKind::WhiteSnr { snr_db },
            seed: 0,
        }
    }

    pub fn pcm(params: PcmParams) -> Self {
        Self {
            kind: NoiseKind::Pcm(params),
            seed: 0,
        }
    }
}
