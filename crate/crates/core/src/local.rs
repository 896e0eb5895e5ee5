//! Original KV memory: one key column per support vector plus a one-hot value
//! memory. Inference is `alpha = K^T q`, `gamma = sharpen(alpha)`,
//! `s = V gamma`, prediction `argmax s`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::episodes::SupportSet;
use crate::error::{Error, Result};
use crate::precision::{quantize_matrix, Precision};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sharpening {
    #[default]
    Identity,
    Softmax {
        temperature: f64,
    },
}

/// Per-class scores and the winning class (zero-based).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub scores: DVector<f64>,
    pub predicted: usize,
}

impl ClassScores {
    pub fn from_scores(scores: DVector<f64>) -> Self {
        let predicted = argmax(scores.as_slice());
        Self { scores, predicted }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalKVMemory {
    keys: DMatrix<f64>,
    class_index: Vec<usize>,
    m: usize,
    precision: Precision,
}

impl LocalKVMemory {
    /// Stores the (quantized) support vectors as key columns.
    pub fn build(support: &SupportSet, precision: Precision) -> Self {
        Self {
            keys: quantize_matrix(support.vectors(), precision),
            class_index: support.class_index().to_vec(),
            m: support.m(),
            precision,
        }
    }

    pub fn keys(&self) -> &DMatrix<f64> {
        &self.keys
    }

    pub fn class_index(&self) -> &[usize] {
        &self.class_index
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn d(&self) -> usize {
        self.keys.nrows()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.keys.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.ncols() == 0
    }

    /// One-hot value memory `V`, `m x mn`.
    pub fn values(&self) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(self.m, self.len());
        for (i, &c) in self.class_index.iter().enumerate() {
            v[(c, i)] = 1.0;
        }
        v
    }

    pub fn similarities(&self, query: &DVector<f64>) -> Result<DVector<f64>> {
        if query.len() != self.d() {
            return Err(Error::Dimension(format!(
                "query has length {}, memory expects {}",
                query.len(),
                self.d()
            )));
        }
        Ok(self.keys.tr_mul(query))
    }

    /// `K^T Q` for a `d x q` batch of query columns.
    pub fn similarities_batch(&self, queries: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if queries.nrows() != self.d() {
            return Err(Error::Dimension(format!(
                "queries have {} rows, memory expects {}",
                queries.nrows(),
                self.d()
            )));
        }
        Ok(self.keys.tr_mul(queries))
    }

    /// `s = V gamma`.
    pub fn class_scores(&self, gamma: &DVector<f64>) -> Result<ClassScores> {
        if gamma.len() != self.len() {
            return Err(Error::Dimension(format!(
                "gamma has length {}, memory holds {} entries",
                gamma.len(),
                self.len()
            )));
        }
        let mut s = DVector::zeros(self.m);
        for (&c, &g) in self.class_index.iter().zip(gamma.iter()) {
            s[c] += g;
        }
        Ok(ClassScores::from_scores(s))
    }

    /// Per-class accumulation for every column of an `mn x q` batch.
    pub fn class_scores_batch(&self, gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if gamma.nrows() != self.len() {
            return Err(Error::Dimension(format!(
                "gamma has {} rows, memory holds {} entries",
                gamma.nrows(),
                self.len()
            )));
        }
        let mut s = DMatrix::zeros(self.m, gamma.ncols());
        for q in 0..gamma.ncols() {
            for (i, &c) in self.class_index.iter().enumerate() {
                s[(c, q)] += gamma[(i, q)];
            }
        }
        Ok(s)
    }

    /// Full pipeline for one query.
    pub fn infer(&self, query: &DVector<f64>, sharpening: Sharpening) -> Result<ClassScores> {
        let alpha = self.similarities(query)?;
        let gamma = sharpen(&alpha, sharpening)?;
        self.class_scores(&gamma)
    }
}

pub fn build_local(support: &SupportSet, precision: Precision) -> LocalKVMemory {
    LocalKVMemory::build(support, precision)
}

pub fn sharpen(alpha: &DVector<f64>, sharpening: Sharpening) -> Result<DVector<f64>> {
    if alpha.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("similarities contain non-finite entries".into()));
    }
    match sharpening {
        Sharpening::Identity => Ok(alpha.clone()),
        Sharpening::Softmax { temperature } => {
            if temperature.is_nan() || temperature <= 0.0 {
                return Err(Error::Parameter(format!(
                    "softmax temperature must be > 0, got {temperature}"
                )));
            }
            let shift = alpha.max();
            let e = alpha.map(|a| ((a - shift) / temperature).exp());
            let total = e.sum();
            Ok(e / total)
        }
    }
}

/// Distance-weighted k-nearest-neighbour vote with `k = mn`: every support
/// vector votes for its class with weight `sharpen(<K_i, q>)`. Written as
/// plain loops to serve as an independent check on the matrix pipeline.
pub fn knn_oracle(support: &SupportSet, query: &DVector<f64>, sharpening: Sharpening) -> Result<ClassScores> {
    let d = support.d();
    if query.len() != d {
        return Err(Error::Dimension(format!(
            "query has length {}, support vectors have {d}",
            query.len()
        )));
    }
    let mut weights = Vec::with_capacity(support.len());
    for i in 0..support.len() {
        let neighbour = support.vector(i);
        let mut dot = 0.0;
        for k in 0..d {
            dot += neighbour[k] * query[k];
        }
        weights.push(dot);
    }
    match sharpening {
        Sharpening::Identity => {}
        Sharpening::Softmax { temperature } => {
            if temperature.is_nan() || temperature <= 0.0 {
                return Err(Error::Parameter(format!(
                    "softmax temperature must be > 0, got {temperature}"
                )));
            }
            let shift = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for w in weights.iter_mut() {
                *w = ((*w - shift) / temperature).exp();
                total += *w;
            }
            for w in weights.iter_mut() {
                *w /= total;
            }
        }
    }
    let mut votes = vec![0.0; support.m()];
    for (i, w) in weights.into_iter().enumerate() {
        votes[support.class_index()[i]] += w;
    }
    let mut best = 0;
    for j in 1..votes.len() {
        if votes[j] > votes[best] {
            best = j;
        }
    }
    Ok(ClassScores {
        scores: DVector::from_vec(votes),
        predicted: best,
    })
}
