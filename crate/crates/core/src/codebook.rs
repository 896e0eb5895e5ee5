//! Value memory of the generalized KV memory: one `r`-dimensional label code
//! per class, stored as the columns of an `r x m` matrix.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodebookMode {
    /// Orthonormal columns from the QR factor of a Gaussian matrix (`r >= m`).
    Orthogonal,
    /// Row-whitened Gaussian matrix with unit-norm columns (`r < m`).
    Whitened,
    /// Sylvester-Hadamard columns scaled by `1/sqrt(r)`.
    Walsh,
    /// I.i.d. Gaussian columns normalized to unit norm.
    Gaussian,
}

impl CodebookMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CodebookMode::Orthogonal => "orthogonal",
            CodebookMode::Whitened => "whitened",
            CodebookMode::Walsh => "walsh",
            CodebookMode::Gaussian => "gaussian",
        }
    }

    /// Orthogonal codes when they exist, whitened codes otherwise.
    pub fn for_shape(r: usize, m: usize) -> Self {
        if r >= m {
            CodebookMode::Orthogonal
        } else {
            CodebookMode::Whitened
        }
    }
}

impl fmt::Display for CodebookMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CodebookMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "orthogonal" => Ok(CodebookMode::Orthogonal),
            "whitened" => Ok(CodebookMode::Whitened),
            "walsh" => Ok(CodebookMode::Walsh),
            "gaussian" => Ok(CodebookMode::Gaussian),
            other => Err(Error::Parameter(format!("unknown codebook mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelCodebook {
    matrix: DMatrix<f64>,
    mode: CodebookMode,
    seed: u64,
}

impl LabelCodebook {
    /// Builds an `r x m` codebook. Deterministic for a fixed `(r, m, mode, seed)`.
    pub fn new(r: usize, m: usize, mode: CodebookMode, seed: u64) -> Result<Self> {
        if r == 0 {
            return Err(Error::Dimension("codebook requires r >= 1".into()));
        }
        if m < 2 {
            return Err(Error::Dimension(format!("codebook requires m >= 2, got m = {m}")));
        }
        let matrix = match mode {
            CodebookMode::Orthogonal => {
                if r < m {
                    return Err(Error::Dimension(format!(
                        "orthogonal codebook requires r >= m, got r = {r}, m = {m}"
                    )));
                }
                orthonormal_columns(r, m, seed)
            }
            CodebookMode::Whitened => {
                if r >= m {
                    return Err(Error::Dimension(format!(
                        "whitened codebook requires r < m, got r = {r}, m = {m}"
                    )));
                }
                let mut l = row_whitened(r, m, seed)?;
                normalize_columns(&mut l);
                l
            }
            CodebookMode::Walsh => {
                if !r.is_power_of_two() {
                    return Err(Error::Dimension(format!(
                        "walsh codebook requires r to be a power of two, got r = {r}"
                    )));
                }
                if r < m {
                    return Err(Error::Dimension(format!(
                        "walsh codebook requires r >= m, got r = {r}, m = {m}"
                    )));
                }
                let scale = 1.0 / (r as f64).sqrt();
                sylvester_hadamard(r).columns(0, m).map(|x| x * scale)
            }
            CodebookMode::Gaussian => {
                let mut l = gaussian(r, m, seed);
                normalize_columns(&mut l);
                l
            }
        };
        Ok(Self { matrix, mode, seed })
    }

    /// Reassembles a codebook from stored parts, checking the shape constraints
    /// of its mode but not regenerating it.
    pub fn from_parts(matrix: DMatrix<f64>, mode: CodebookMode, seed: u64) -> Result<Self> {
        let (r, m) = matrix.shape();
        if r == 0 || m < 2 {
            return Err(Error::Dimension(format!("invalid codebook shape {r}x{m}")));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("codebook contains non-finite entries".into()));
        }
        Ok(Self { matrix, mode, seed })
    }

    pub fn r(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn m(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn mode(&self) -> CodebookMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Code of class `class` (zero-based).
    pub fn label(&self, class: usize) -> nalgebra::DVectorView<'_, f64> {
        self.matrix.column(class)
    }

    /// Largest absolute inner product between two distinct label codes.
    pub fn crosstalk(&self) -> f64 {
        let gram = self.matrix.tr_mul(&self.matrix);
        let m = gram.nrows();
        let mut worst = 0.0_f64;
        for j in 0..m {
            for k in 0..m {
                if j != k {
                    worst = worst.max(gram[(j, k)].abs());
                }
            }
        }
        worst
    }

    /// Two header lines (`r,m,mode,seed` and its values) followed by `r`
    /// rows of `m` entries.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,m,mode,seed\n");
        out.push_str(&format!("{},{},{},{}\n", self.r(), self.m(), self.mode, self.seed));
        write_rows(&mut out, &self.matrix);
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            row: 1,
            message: "empty codebook file".into(),
        })?;
        if header.trim() != "r,m,mode,seed" {
            return Err(Error::Parse {
                row: 1,
                message: format!("expected header `r,m,mode,seed`, found `{header}`"),
            });
        }
        let (meta_row, meta) = lines.next().ok_or(Error::Parse {
            row: 2,
            message: "missing codebook metadata".into(),
        })?;
        let fields: Vec<&str> = meta.split(',').map(str::trim).collect();
        let bad_meta = |message: String| Error::Parse {
            row: meta_row + 1,
            message,
        };
        if fields.len() != 4 {
            return Err(bad_meta(format!("expected 4 metadata fields, found {}", fields.len())));
        }
        let r: usize = fields[0]
            .parse()
            .map_err(|_| bad_meta(format!("bad r `{}`", fields[0])))?;
        let m: usize = fields[1]
            .parse()
            .map_err(|_| bad_meta(format!("bad m `{}`", fields[1])))?;
        let mode: CodebookMode = fields[2].parse().map_err(|e: Error| bad_meta(e.to_string()))?;
        let seed: u64 = fields[3]
            .parse()
            .map_err(|_| bad_meta(format!("bad seed `{}`", fields[3])))?;
        let matrix = read_rows(lines, r, m)?;
        Self::from_parts(matrix, mode, seed)
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

/// Free-function form of [`LabelCodebook::new`].
pub fn make_codebook(r: usize, m: usize, mode: CodebookMode, seed: u64) -> Result<LabelCodebook> {
    LabelCodebook::new(r, m, mode, seed)
}

pub fn crosstalk(codebook: &LabelCodebook) -> f64 {
    codebook.crosstalk()
}

fn gaussian(r: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng::from_seed(seed);
    // Row-major fill so the draw order does not depend on storage layout.
    let mut out = DMatrix::zeros(r, m);
    for i in 0..r {
        for j in 0..m {
            out[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    out
}

fn orthonormal_columns(r: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let qr = gaussian(r, m, seed).qr();
    let mut q = qr.q();
    let rdiag = qr.r().diagonal();
    // Fix the sign ambiguity so that diag(R) >= 0.
    for (j, d) in rdiag.iter().enumerate() {
        if *d < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `(M M^T)^{-1/2} M` for a Gaussian `M`: rows become orthonormal.
pub(crate) fn row_whitened(r: usize, m: usize, seed: u64) -> Result<DMatrix<f64>> {
    let g = gaussian(r, m, seed);
    let cov = &g * g.transpose();
    let eig = SymmetricEigen::new(cov);
    if eig.eigenvalues.iter().any(|&l| l <= f64::EPSILON) {
        return Err(Error::Validation("singular covariance while whitening codebook".into()));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let w = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    Ok(w * g)
}

fn normalize_columns(l: &mut DMatrix<f64>) {
    for mut col in l.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
}

/// `n x n` Sylvester-Hadamard matrix with `+1/-1` entries; `n` a power of two.
pub(crate) fn sylvester_hadamard(n: usize) -> DMatrix<f64> {
    debug_assert!(n.is_power_of_two());
    let mut h = DMatrix::from_element(1, 1, 1.0);
    while h.nrows() < n {
        let k = h.nrows();
        let mut next = DMatrix::zeros(2 * k, 2 * k);
        next.view_mut((0, 0), (k, k)).copy_from(&h);
        next.view_mut((0, k), (k, k)).copy_from(&h);
        next.view_mut((k, 0), (k, k)).copy_from(&h);
        next.view_mut((k, k), (k, k)).copy_from(&(-&h));
        h = next;
    }
    h
}

pub(crate) fn write_rows(out: &mut String, matrix: &DMatrix<f64>) {
    for row in matrix.row_iter() {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
}

pub(crate) fn read_rows<'a>(
    lines: impl Iterator<Item = (usize, &'a str)>,
    rows: usize,
    cols: usize,
) -> Result<DMatrix<f64>> {
    let mut matrix = DMatrix::zeros(rows, cols);
    let mut seen = 0;
    for (lineno, line) in lines {
        if seen == rows {
            return Err(Error::Parse {
                row: lineno + 1,
                message: format!("more than the declared {rows} rows"),
            });
        }
        let mut count = 0;
        for (j, field) in line.split(',').enumerate() {
            if j >= cols {
                count = j + 1;
                continue;
            }
            matrix[(seen, j)] = field.trim().parse().map_err(|_| Error::Parse {
                row: lineno + 1,
                message: format!("non-numeric entry `{}`", field.trim()),
            })?;
            count = j + 1;
        }
        if count != cols {
            return Err(Error::Parse {
                row: lineno + 1,
                message: format!("expected {cols} entries, found {count}"),
            });
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::Parse {
            row: seen + 3,
            message: format!("expected {rows} rows, found {seen}"),
        });
    }
    Ok(matrix)
}
