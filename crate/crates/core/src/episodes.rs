//! m-way n-shot episodes drawn from an embedding bank.
//!
//! Class labels inside an episode are zero-based (`0..m`). Bank files carry
//! their own positive class ids, which are kept only for export.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precision::Precision;
use crate::rng::{self, Rng};

/// Labeled support vectors of one episode, stored as the columns of a
/// `d x mn` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    vectors: DMatrix<f64>,
    class_index: Vec<usize>,
    m: usize,
    n: usize,
}

impl SupportSet {
    /// Validates labels and the exactly-`n`-per-class layout. Vectors are
    /// stored as given; use [`SupportSet::normalized`] for unit norm.
    pub fn new(vectors: DMatrix<f64>, class_index: Vec<usize>, m: usize) -> Result<Self> {
        if vectors.ncols() == 0 || vectors.nrows() == 0 {
            return Err(Error::Validation("support set is empty".into()));
        }
        if class_index.len() != vectors.ncols() {
            return Err(Error::Dimension(format!(
                "{} class labels for {} support vectors",
                class_index.len(),
                vectors.ncols()
            )));
        }
        if m == 0 {
            return Err(Error::Validation("support set needs m >= 1".into()));
        }
        let mut counts = vec![0usize; m];
        for (i, &c) in class_index.iter().enumerate() {
            if c >= m {
                return Err(Error::Validation(format!(
                    "support vector {i} has class {c}, outside 0..{m}"
                )));
            }
            counts[c] += 1;
        }
        let n = counts[0];
        if n == 0 || counts.iter().any(|&k| k != n) {
            return Err(Error::Validation(format!(
                "classes must have equal, nonzero support counts, found {counts:?}"
            )));
        }
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("support vectors contain non-finite entries".into()));
        }
        Ok(Self {
            vectors,
            class_index,
            m,
            n,
        })
    }

    /// Like [`SupportSet::new`] but scales every vector to unit norm.
    pub fn normalized(mut vectors: DMatrix<f64>, class_index: Vec<usize>, m: usize) -> Result<Self> {
        for (i, mut col) in vectors.column_iter_mut().enumerate() {
            let norm = col.norm();
            if norm == 0.0 {
                return Err(Error::Validation(format!("support vector {i} is zero")));
            }
            col /= norm;
        }
        Self::new(vectors, class_index, m)
    }

    pub fn d(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> nalgebra::DVectorView<'_, f64> {
        self.vectors.column(i)
    }

    pub fn class_index(&self) -> &[usize] {
        &self.class_index
    }
}

/// Query vectors of one episode (columns) with their true classes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub queries: DMatrix<f64>,
    pub truth: Vec<usize>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn query(&self, i: usize) -> DVector<f64> {
        self.queries.column(i).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrototypeMode {
    /// Normalized standard-normal prototype.
    GaussianUnit,
    /// Uniform `+-1/sqrt(d)` prototype.
    BipolarRandom,
}

impl std::str::FromStr for PrototypeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "gaussianunit" | "gaussian" => Ok(PrototypeMode::GaussianUnit),
            "bipolarrandom" | "bipolar" => Ok(PrototypeMode::BipolarRandom),
            other => Err(Error::Parameter(format!("unknown prototype mode `{other}`"))),
        }
    }
}

/// Synthetic stand-in for controller embeddings: noisy samples around
/// quasi-orthogonal class prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub d: usize,
    pub num_classes: usize,
    pub samples_per_class: usize,
    /// Per-entry standard deviation of the noise added to the prototype.
    pub within_class_sd: f64,
    pub prototype_mode: PrototypeMode,
    pub seed: u64,
}

impl GeneratorParams {
    /// Per-entry spread at which the noiseless real-valued original memory
    /// scores about 97% on 20-way 5-shot problems with `d = 512`.
    pub const DEFAULT_SPREAD: f64 = 0.14;

    /// Spread at which the noiseless original memory of the given precision
    /// scores about 97% on 20-way 5-shot problems with `d = 512`. Quantization
    /// costs accuracy, so the quantized variants need tighter classes.
    pub fn calibrated_spread(precision: Precision) -> f64 {
        match precision {
            Precision::Real => Self::DEFAULT_SPREAD,
            Precision::Bipolar => 0.109,
            Precision::Binary => 0.0865,
        }
    }

    /// Bank with the shape of the Omniglot test embeddings: 659 classes x 20 samples, d = 512.
    pub fn omniglot_shaped(seed: u64) -> Self {
        Self {
            d: 512,
            num_classes: 659,
            samples_per_class: 20,
            within_class_sd: Self::DEFAULT_SPREAD,
            prototype_mode: PrototypeMode::GaussianUnit,
            seed,
        }
    }

    /// [`GeneratorParams::omniglot_shaped`] with the spread calibrated for `precision`.
    pub fn omniglot_shaped_for(precision: Precision, seed: u64) -> Self {
        Self {
            within_class_sd: Self::calibrated_spread(precision),
            ..Self::omniglot_shaped(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.num_classes == 0 || self.samples_per_class == 0 {
            return Err(Error::Parameter(
                "generator needs d, num_classes and samples_per_class >= 1".into(),
            ));
        }
        if !(self.within_class_sd >= 0.0 && self.within_class_sd.is_finite()) {
            return Err(Error::Parameter(format!(
                "within_class_sd must be finite and >= 0, got {}",
                self.within_class_sd
            )));
        }
        Ok(())
    }
}

/// Unit-norm embedding vectors grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    vectors: DMatrix<f64>,
    class_ids: Vec<u64>,
    members: Vec<Vec<usize>>,
}

impl EmbeddingBank {
    /// `labels[i]` is the external class id of column `i`. Columns are
    /// normalized; classes are ordered by first appearance.
    pub fn new(mut vectors: DMatrix<f64>, labels: &[u64]) -> Result<Self> {
        if labels.len() != vectors.ncols() {
            return Err(Error::Dimension(format!(
                "{} labels for {} vectors",
                labels.len(),
                vectors.ncols()
            )));
        }
        if vectors.ncols() == 0 || vectors.nrows() == 0 {
            return Err(Error::Validation("embedding bank is empty".into()));
        }
        for (i, mut col) in vectors.column_iter_mut().enumerate() {
            let norm = col.norm();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::Validation(format!("bank vector {i} cannot be normalized")));
            }
            col /= norm;
        }
        let mut class_ids: Vec<u64> = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut slot = std::collections::HashMap::new();
        for (i, &id) in labels.iter().enumerate() {
            let k = *slot.entry(id).or_insert_with(|| {
                class_ids.push(id);
                members.push(Vec::new());
                class_ids.len() - 1
            });
            members[k].push(i);
        }
        Ok(Self {
            vectors,
            class_ids,
            members,
        })
    }

    pub fn d(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn num_samples(&self) -> usize {
        self.vectors.ncols()
    }

    /// Smallest per-class sample count.
    pub fn min_class_size(&self) -> usize {
        self.members.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn class_ids(&self) -> &[u64] {
        &self.class_ids
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    /// Column indices of the samples of class slot `k`.
    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    /// Mean absolute cosine between the class means of distinct classes.
    pub fn mean_between_class_cosine(&self) -> f64 {
        let means: Vec<DVector<f64>> = self
            .members
            .iter()
            .map(|idx| {
                let mut acc = DVector::zeros(self.d());
                for &i in idx {
                    acc += self.vectors.column(i);
                }
                let norm = acc.norm();
                if norm > 0.0 {
                    acc / norm
                } else {
                    acc
                }
            })
            .collect();
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for a in 0..means.len() {
            for b in (a + 1)..means.len() {
                sum += means[a].dot(&means[b]).abs();
                pairs += 1;
            }
        }
        if pairs == 0 {
            0.0
        } else {
            sum / pairs as f64
        }
    }

    /// One row per sample: `class_id,v1,...,vd`, no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.num_samples() * self.d() * 12);
        for (k, idx) in self.members.iter().enumerate() {
            for &i in idx {
                out.push_str(&self.class_ids[k].to_string());
                for x in self.vectors.column(i).iter() {
                    out.push(',');
                    out.push_str(&x.to_string());
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut labels = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        let mut d: Option<usize> = None;
        for (lineno, line) in text.lines().enumerate() {
            let row = lineno + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let id_field = fields.next().unwrap_or("").trim();
            let id: u64 = id_field.parse().map_err(|_| Error::Parse {
                row,
                message: format!("class id `{id_field}` is not a positive integer"),
            })?;
            if id == 0 {
                return Err(Error::Parse {
                    row,
                    message: "class id must be positive".into(),
                });
            }
            let before = data.len();
            for field in fields {
                let field = field.trim();
                let x: f64 = field.parse().map_err(|_| Error::Parse {
                    row,
                    message: format!("non-numeric entry `{field}`"),
                })?;
                if !x.is_finite() {
                    return Err(Error::Parse {
                        row,
                        message: format!("non-finite entry `{field}`"),
                    });
                }
                data.push(x);
            }
            let width = data.len() - before;
            match d {
                None if width == 0 => {
                    return Err(Error::Parse {
                        row,
                        message: "row has no vector entries".into(),
                    })
                }
                None => d = Some(width),
                Some(expected) if expected != width => {
                    return Err(Error::Parse {
                        row,
                        message: format!("ragged row: expected {expected} entries, found {width}"),
                    })
                }
                Some(_) => {}
            }
            labels.push(id);
        }
        let d = d.ok_or(Error::Parse {
            row: 1,
            message: "bank file contains no rows".into(),
        })?;
        let vectors = DMatrix::from_vec(d, labels.len(), data);
        Self::new(vectors, &labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankFormat {
    Csv,
}

pub fn import_bank(path: impl AsRef<Path>, format: BankFormat) -> Result<EmbeddingBank> {
    match format {
        BankFormat::Csv => EmbeddingBank::load(path),
    }
}

pub fn generate_bank(params: &GeneratorParams) -> Result<EmbeddingBank> {
    params.validate()?;
    let d = params.d;
    let total = params.num_classes * params.samples_per_class;
    let mut rng = rng::from_seed(params.seed);
    let spread =
        Normal::new(0.0, params.within_class_sd).map_err(|e| Error::Parameter(format!("within_class_sd: {e}")))?;
    let mut vectors = DMatrix::zeros(d, total);
    let mut labels = Vec::with_capacity(total);
    let mut col = 0;
    for class in 0..params.num_classes {
        let prototype = draw_prototype(d, params.prototype_mode, &mut rng);
        for _ in 0..params.samples_per_class {
            let mut v = prototype.clone();
            if params.within_class_sd > 0.0 {
                for x in v.iter_mut() {
                    *x += spread.sample(&mut rng);
                }
            }
            let norm = v.norm();
            vectors.column_mut(col).copy_from(&(v / norm));
            labels.push(class as u64 + 1);
            col += 1;
        }
    }
    EmbeddingBank::new(vectors, &labels)
}

fn draw_prototype(d: usize, mode: PrototypeMode, rng: &mut Rng) -> DVector<f64> {
    match mode {
        PrototypeMode::GaussianUnit => loop {
            let v: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
            let norm = v.norm();
            if norm > 0.0 {
                break v / norm;
            }
        },
        PrototypeMode::BipolarRandom => {
            let a = 1.0 / (d as f64).sqrt();
            DVector::from_fn(d, |_, _| if rng.random::<bool>() { a } else { -a })
        }
    }
}

/// Draws `m` classes without replacement, then `n` support and
/// `queries_per_class` disjoint query samples from each. Support columns are
/// grouped by class in episode-label order.
pub fn sample_episode(
    bank: &EmbeddingBank,
    m: usize,
    n: usize,
    queries_per_class: usize,
    rng: &mut Rng,
) -> Result<(SupportSet, QuerySet)> {
    if m == 0 || n == 0 {
        return Err(Error::Parameter("episodes need m >= 1 and n >= 1".into()));
    }
    if m > bank.num_classes() {
        return Err(Error::Capacity(format!(
            "{m}-way episode requested from a bank with {} classes",
            bank.num_classes()
        )));
    }
    let need = n + queries_per_class;
    let classes = sample_indices(rng, bank.num_classes(), m).into_vec();
    let d = bank.d();
    let mut support = DMatrix::zeros(d, m * n);
    let mut support_labels = Vec::with_capacity(m * n);
    let mut queries = DMatrix::zeros(d, m * queries_per_class);
    let mut truth = Vec::with_capacity(m * queries_per_class);
    for (label, &k) in classes.iter().enumerate() {
        let members = bank.members(k);
        if members.len() < need {
            return Err(Error::Capacity(format!(
                "class {} has {} samples, episode needs {need}",
                bank.class_ids()[k],
                members.len()
            )));
        }
        let picks = sample_indices(rng, members.len(), need).into_vec();
        for (j, &p) in picks.iter().enumerate() {
            let column = bank.vectors().column(members[p]);
            if j < n {
                support.column_mut(support_labels.len()).copy_from(&column);
                support_labels.push(label);
            } else {
                queries.column_mut(truth.len()).copy_from(&column);
                truth.push(label);
            }
        }
    }
    let support = SupportSet::new(support, support_labels, m)?;
    Ok((support, QuerySet { queries, truth }))
}
