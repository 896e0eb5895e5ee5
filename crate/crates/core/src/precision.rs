//! Key precision variants and the sign-based quantizer shared by both memories.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Real,
    Bipolar,
    Binary,
}

impl Precision {
    pub fn is_quantized(self) -> bool {
        !matches!(self, Precision::Real)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Real => "real",
            Precision::Bipolar => "bipolar",
            Precision::Binary => "binary",
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "real" => Ok(Precision::Real),
            "bipolar" => Ok(Precision::Bipolar),
            "binary" => Ok(Precision::Binary),
            other => Err(Error::Parameter(format!("unknown precision `{other}`"))),
        }
    }
}

/// Sign with `sign(0) = +1`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
pub(crate) fn quantize_scalar(x: f64, precision: Precision) -> f64 {
    match precision {
        Precision::Real => x,
        Precision::Bipolar => sign(x),
        Precision::Binary => (sign(x) + 1.0) / 2.0,
    }
}

/// Quantizes a vector: identity for `Real`, `sign` for `Bipolar`,
/// `(sign + 1) / 2` for `Binary`.
pub fn quantize(vector: &DVector<f64>, precision: Precision) -> Result<DVector<f64>> {
    if let Some(i) = vector.iter().position(|x| !x.is_finite()) {
        return Err(Error::Validation(format!("non-finite entry at index {i}")));
    }
    Ok(vector.map(|x| quantize_scalar(x, precision)))
}

pub(crate) fn quantize_matrix(matrix: &DMatrix<f64>, precision: Precision) -> DMatrix<f64> {
    matrix.map(|x| quantize_scalar(x, precision))
}
