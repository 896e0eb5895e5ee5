//! Generalized KV memory: an `r x d` key memory formed as the superposition
//! of outer products `L_{c(i)} K_i^T`, read out through the label codebook.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::codebook::{read_rows, write_rows, LabelCodebook};
use crate::episodes::SupportSet;
use crate::error::{Error, Result};
use crate::local::ClassScores;
use crate::precision::{quantize_matrix, Precision};

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedKeyMemory {
    matrix: DMatrix<f64>,
    codebook: Arc<LabelCodebook>,
    precision: Precision,
    count: usize,
}

impl DistributedKeyMemory {
    /// All-zero real memory for `d`-dimensional support vectors.
    pub fn empty(d: usize, codebook: Arc<LabelCodebook>) -> Self {
        Self {
            matrix: DMatrix::zeros(codebook.r(), d),
            codebook,
            precision: Precision::Real,
            count: 0,
        }
    }

    /// Superposes every support vector with its class code. Support vectors
    /// are used as given (real-valued); quantization happens afterwards.
    pub fn build(support: &SupportSet, codebook: Arc<LabelCodebook>) -> Result<Self> {
        if support.m() != codebook.m() {
            return Err(Error::Validation(format!(
                "support set has {} classes, codebook has {}",
                support.m(),
                codebook.m()
            )));
        }
        // sum_i L_c(i) K_i^T = L S^T with S the per-class sums of support vectors.
        let mut class_sums = DMatrix::zeros(support.d(), support.m());
        for (i, &c) in support.class_index().iter().enumerate() {
            let mut col = class_sums.column_mut(c);
            col += support.vector(i);
        }
        let matrix = codebook.matrix() * class_sums.transpose();
        Ok(Self {
            matrix,
            codebook,
            precision: Precision::Real,
            count: support.len(),
        })
    }

    /// Adds `L_class support_vector^T` (rank-1 increment).
    pub fn update(&mut self, support_vector: &DVector<f64>, class: usize) -> Result<()> {
        if self.precision.is_quantized() {
            return Err(Error::State(format!(
                "memory was quantized to {} and can no longer be updated",
                self.precision
            )));
        }
        if class >= self.codebook.m() {
            return Err(Error::Validation(format!(
                "class {class} outside codebook range 0..{}",
                self.codebook.m()
            )));
        }
        if support_vector.len() != self.d() {
            return Err(Error::Dimension(format!(
                "support vector has length {}, memory expects {}",
                support_vector.len(),
                self.d()
            )));
        }
        let label = self.codebook.label(class);
        self.matrix.ger(1.0, &label, support_vector, 1.0);
        self.count += 1;
        Ok(())
    }

    /// Entrywise `sign` (bipolar) or `(sign + 1) / 2` (binary). The result is frozen.
    pub fn bipolarize(self, target: Precision) -> Result<Self> {
        if self.precision.is_quantized() {
            return Err(Error::State(format!("memory is already {}", self.precision)));
        }
        if !target.is_quantized() {
            return Err(Error::Parameter("quantization target must be bipolar or binary".into()));
        }
        Ok(Self {
            matrix: quantize_matrix(&self.matrix, target),
            precision: target,
            ..self
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn codebook(&self) -> &Arc<LabelCodebook> {
        &self.codebook
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn r(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn d(&self) -> usize {
        self.matrix.ncols()
    }

    /// `gamma = K q`, `s = L^T gamma`, with the memory's own codebook.
    pub fn infer(&self, query: &DVector<f64>) -> Result<ClassScores> {
        infer_with(&self.matrix, &self.codebook, query)
    }

    /// `L^T (K Q)` for a `d x q` batch; returns the `m x q` score matrix.
    pub fn scores_batch(&self, queries: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let gamma = readout_batch(&self.matrix, queries)?;
        Ok(self.codebook.matrix().tr_mul(&gamma))
    }

    /// `r`, `d`, precision header then row-major entries.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,d,precision\n");
        out.push_str(&format!("{},{},{}\n", self.r(), self.d(), self.precision));
        write_rows(&mut out, &self.matrix);
        out
    }

    /// Restores a memory exported by [`DistributedKeyMemory::to_csv`],
    /// pairing it with `codebook`.
    pub fn from_csv(text: &str, codebook: Arc<LabelCodebook>) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "r,d,precision" => {}
            other => {
                return Err(Error::Parse {
                    row: 1,
                    message: format!("expected header `r,d,precision`, found {other:?}"),
                })
            }
        }
        let (row, meta) = lines.next().ok_or(Error::Parse {
            row: 2,
            message: "missing memory metadata".into(),
        })?;
        let bad = |message: String| Error::Parse { row: row + 1, message };
        let fields: Vec<&str> = meta.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 metadata fields, found {}", fields.len())));
        }
        let r: usize = fields[0].parse().map_err(|_| bad(format!("bad r `{}`", fields[0])))?;
        let d: usize = fields[1].parse().map_err(|_| bad(format!("bad d `{}`", fields[1])))?;
        let precision: Precision = fields[2].parse().map_err(|e: Error| bad(e.to_string()))?;
        if r != codebook.r() {
            return Err(Error::Dimension(format!(
                "memory has r = {r}, codebook has r = {}",
                codebook.r()
            )));
        }
        let matrix = read_rows(lines, r, d)?;
        Ok(Self {
            matrix,
            codebook,
            precision,
            count: 0,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

pub fn build_distributed(support: &SupportSet, codebook: Arc<LabelCodebook>) -> Result<DistributedKeyMemory> {
    DistributedKeyMemory::build(support, codebook)
}

/// Inference through an explicit codebook, which must match the memory's `r`.
pub fn infer_distributed(
    memory: &DistributedKeyMemory,
    codebook: &LabelCodebook,
    query: &DVector<f64>,
) -> Result<ClassScores> {
    infer_with(memory.matrix(), codebook, query)
}

fn infer_with(matrix: &DMatrix<f64>, codebook: &LabelCodebook, query: &DVector<f64>) -> Result<ClassScores> {
    if codebook.r() != matrix.nrows() {
        return Err(Error::Dimension(format!(
            "codebook has r = {}, memory has r = {}",
            codebook.r(),
            matrix.nrows()
        )));
    }
    if query.len() != matrix.ncols() {
        return Err(Error::Dimension(format!(
            "query has length {}, memory expects {}",
            query.len(),
            matrix.ncols()
        )));
    }
    let gamma = matrix * query;
    Ok(ClassScores::from_scores(codebook.matrix().tr_mul(&gamma)))
}

/// `K Q` with a shape check.
pub(crate) fn readout_batch(matrix: &DMatrix<f64>, queries: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if queries.nrows() != matrix.ncols() {
        return Err(Error::Dimension(format!(
            "queries have {} rows, memory expects {}",
            queries.nrows(),
            matrix.ncols()
        )));
    }
    Ok(matrix * queries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::CodebookMode;
    use crate::local::{build_local, Sharpening};
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn identity_codebook() -> Arc<LabelCodebook> {
        Arc::new(LabelCodebook::from_parts(DMatrix::identity(2, 2), CodebookMode::Orthogonal, 0).unwrap())
    }

    fn random_support(d: usize, m: usize, n: usize, seed: u64) -> SupportSet {
        let mut g = rng::from_seed(seed);
        let v = DMatrix::from_fn(d, m * n, |_, _| StandardNormal.sample(&mut g));
        SupportSet::normalized(v, (0..m * n).map(|i| i % m).collect(), m).unwrap()
    }

    /// Entry-by-entry triple loop.
    fn brute_force(support: &SupportSet, l: &LabelCodebook) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(l.r(), support.d());
        for a in 0..l.r() {
            for b in 0..support.d() {
                for i in 0..support.len() {
                    out[(a, b)] += l.matrix()[(a, support.class_index()[i])] * support.vector(i)[b];
                }
            }
        }
        out
    }

    #[test]
    fn standard_basis_example() {
        let support = SupportSet::new(DMatrix::identity(2, 2), vec![0, 1], 2).unwrap();
        let mem = build_distributed(&support, identity_codebook()).unwrap();
        assert_eq!(mem.matrix(), &DMatrix::identity(2, 2));
        let s = mem.infer(&DVector::from_column_slice(&[1.0, 0.0])).unwrap();
        assert_eq!(s.scores, DVector::from_column_slice(&[1.0, 0.0]));
        assert_eq!(s.predicted, 0);
        let s = mem.infer(&DVector::zeros(2)).unwrap();
        assert_eq!((s.scores, s.predicted), (DVector::zeros(2), 0));
    }

    #[test]
    fn single_class_superposition_is_linear() {
        let l = LabelCodebook::new(3, 2, CodebookMode::Orthogonal, 1).unwrap();
        let k1 = DVector::from_column_slice(&[0.3, -1.0, 2.0, 0.5]);
        let k2 = DVector::from_column_slice(&[1.0, 0.25, -0.5, 0.0]);
        // Codebooks need m >= 2, so only class 0 receives vectors here.
        let mut mem = DistributedKeyMemory::empty(4, Arc::new(l.clone()));
        mem.update(&k1, 0).unwrap();
        mem.update(&k2, 0).unwrap();
        let expected = l.label(0).into_owned() * (k1 + k2).transpose();
        assert!((mem.matrix() - expected).abs().max() < 1e-15);
    }

    #[test]
    fn matches_triple_loop() {
        for seed in 0..10 {
            let support = random_support(3, 5, 1, seed);
            let l = LabelCodebook::new(4, 5, CodebookMode::Whitened, seed).unwrap();
            let mem = build_distributed(&support, Arc::new(l.clone())).unwrap();
            assert!((mem.matrix() - brute_force(&support, &l)).abs().max() < 1e-12);
        }
    }

    #[test]
    fn mismatched_codebook_rejected() {
        let support = random_support(3, 3, 2, 0);
        let l = Arc::new(LabelCodebook::new(4, 2, CodebookMode::Orthogonal, 0).unwrap());
        assert!(matches!(
            build_distributed(&support, l.clone()),
            Err(Error::Validation(_))
        ));
        let mut mem = DistributedKeyMemory::empty(3, l);
        assert!(matches!(mem.update(&DVector::zeros(3), 2), Err(Error::Validation(_))));
        assert!(matches!(mem.update(&DVector::zeros(4), 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn incremental_equals_batch() {
        let support = random_support(16, 4, 3, 8);
        let l = Arc::new(LabelCodebook::new(6, 4, CodebookMode::Orthogonal, 2).unwrap());
        let batch = build_distributed(&support, l.clone()).unwrap();
        let mut inc = DistributedKeyMemory::empty(16, l);
        for i in 0..support.len() {
            inc.update(&support.vector(i).into_owned(), support.class_index()[i])
                .unwrap();
        }
        assert_eq!(inc.count(), batch.count());
        assert!((inc.matrix() - batch.matrix()).abs().max() <= 1e-12);
    }

    #[test]
    fn single_update_is_rank_one() {
        let l = Arc::new(LabelCodebook::new(5, 3, CodebookMode::Orthogonal, 4).unwrap());
        let mut mem = DistributedKeyMemory::empty(4, l);
        mem.update(&DVector::from_column_slice(&[0.1, -0.7, 0.2, 0.4]), 1)
            .unwrap();
        let sv = mem.matrix().clone().singular_values();
        let significant = sv.iter().filter(|&&s| s > 1e-12 * sv.max()).count();
        assert!(significant <= 1);
        assert!(sv.max() > 0.0);
    }

    #[test]
    fn bipolarize_examples() {
        let m = DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.0, 2.0]);
        let mem = DistributedKeyMemory {
            matrix: m,
            codebook: identity_codebook(),
            precision: Precision::Real,
            count: 2,
        };
        let bip = mem.clone().bipolarize(Precision::Bipolar).unwrap();
        assert_eq!(bip.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]));
        let bin = mem.bipolarize(Precision::Binary).unwrap();
        assert_eq!(bin.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]));

        let zero = DistributedKeyMemory::empty(3, identity_codebook());
        let q = zero.bipolarize(Precision::Bipolar).unwrap();
        assert!(q.matrix().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn quantized_memory_is_frozen() {
        let mem = DistributedKeyMemory::empty(2, identity_codebook());
        let mut q = mem.bipolarize(Precision::Binary).unwrap();
        assert!(matches!(q.update(&DVector::zeros(2), 0), Err(Error::State(_))));
        assert!(matches!(q.bipolarize(Precision::Bipolar), Err(Error::State(_))));
        let mem = DistributedKeyMemory::empty(2, identity_codebook());
        assert!(matches!(mem.bipolarize(Precision::Real), Err(Error::Parameter(_))));
    }

    #[test]
    fn shape_independent_of_support_count() {
        let l = Arc::new(LabelCodebook::new(12, 10, CodebookMode::Orthogonal, 0).unwrap());
        for n in [1, 10, 50] {
            let support = random_support(8, 10, n, n as u64);
            let mem = build_distributed(&support, l.clone()).unwrap();
            assert_eq!(mem.matrix().shape(), (12, 8));
            assert_eq!(mem.count(), 10 * n);
        }
    }

    #[test]
    fn orthonormal_codes_reproduce_local_scores() {
        for seed in 0..100 {
            let support = random_support(32, 6, 3, seed);
            let l = Arc::new(LabelCodebook::new(6, 6, CodebookMode::Orthogonal, seed).unwrap());
            let dist = build_distributed(&support, l).unwrap();
            let local = build_local(&support, Precision::Real);
            let q = random_support(32, 1, 1, seed + 1000).vector(0).into_owned();
            let a = dist.infer(&q).unwrap();
            let b = local.infer(&q, Sharpening::Identity).unwrap();
            assert!((&a.scores - &b.scores).abs().max() <= 1e-9);
            assert_eq!(a.predicted, b.predicted);
        }
    }

    #[test]
    fn rotated_codebook_leaves_scores() {
        let support = random_support(20, 5, 2, 3);
        let l = LabelCodebook::new(9, 5, CodebookMode::Orthogonal, 3).unwrap();
        let rot = LabelCodebook::new(9, 9, CodebookMode::Orthogonal, 99).unwrap();
        let rotated = LabelCodebook::from_parts(rot.matrix() * l.matrix(), CodebookMode::Orthogonal, 0).unwrap();
        let a = build_distributed(&support, Arc::new(l)).unwrap();
        let b = build_distributed(&support, Arc::new(rotated.clone())).unwrap();
        let q = random_support(20, 1, 1, 77).vector(0).into_owned();
        let sa = a.infer(&q).unwrap();
        let sb = infer_distributed(&b, &rotated, &q).unwrap();
        assert!((sa.scores - sb.scores).abs().max() <= 1e-9);
    }

    #[test]
    fn dimension_errors() {
        let mem = DistributedKeyMemory::empty(3, identity_codebook());
        assert!(matches!(mem.infer(&DVector::zeros(4)), Err(Error::Dimension(_))));
        let other = LabelCodebook::new(3, 2, CodebookMode::Orthogonal, 0).unwrap();
        assert!(matches!(
            infer_distributed(&mem, &other, &DVector::zeros(3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn batch_scores_match_single() {
        let support = random_support(16, 4, 2, 5);
        let l = Arc::new(LabelCodebook::new(7, 4, CodebookMode::Orthogonal, 5).unwrap());
        let mem = build_distributed(&support, l).unwrap();
        let qs = random_support(16, 3, 1, 6);
        let batch = mem.scores_batch(qs.vectors()).unwrap();
        for j in 0..3 {
            let s = mem.infer(&qs.vector(j).into_owned()).unwrap();
            assert!((batch.column(j) - s.scores).abs().max() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let support = random_support(5, 3, 2, 1);
        let l = Arc::new(LabelCodebook::new(4, 3, CodebookMode::Orthogonal, 1).unwrap());
        let mem = build_distributed(&support, l.clone())
            .unwrap()
            .bipolarize(Precision::Bipolar)
            .unwrap();
        let text = mem.to_csv();
        assert!(text.starts_with("r,d,precision\n4,5,bipolar\n"));
        let back = DistributedKeyMemory::from_csv(&text, l).unwrap();
        assert_eq!(back.matrix(), mem.matrix());
        assert_eq!(back.precision(), Precision::Bipolar);
    }
}
