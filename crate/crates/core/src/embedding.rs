//! Word embedding matrices: loading, standardization and correlation
//! diagnostics.
//!
//! Embeddings are read from the whitespace-separated text format used by
//! GloVe and word2vec. Each line holds a word followed by its vector
//! components; the word2vec variant prefixes the data with an `m d` shape
//! line.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layout of an embedding text file.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextFormat {
    /// One `word v1 ... vd` line per word.
    NoHeader,
    /// As [`TextFormat::NoHeader`], preceded by an `m d` line.
    WithHeader,
}

impl std::str::FromStr for TextFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text-no-header" | "no-header" | "text" => Ok(TextFormat::NoHeader),
            "text-with-header" | "with-header" | "text-dims" => Ok(TextFormat::WithHeader),
            other => Err(Error::InvalidParameter(format!(
                "unknown embedding format {other:?}"
            ))),
        }
    }
}

/// A vocabulary together with an `m × d` matrix of word vectors.
///
/// Rows are kept in the order the words were supplied. The matrix is
/// immutable once constructed; [`standardize`] returns a new matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
    standardized: bool,
}

impl EmbeddingMatrix {
    /// Build a matrix from a vocabulary and its row vectors.
    ///
    /// Fails on duplicate words, on a row count that differs from the
    /// vocabulary size, on `d = 0` and on non-finite entries.
    pub fn new(vocab: Vec<String>, vectors: Array2<f64>) -> Result<Self> {
        if vocab.len() != vectors.nrows() {
            return Err(Error::InvalidParameter(format!(
                "vocabulary has {} words but matrix has {} rows",
                vocab.len(),
                vectors.nrows()
            )));
        }
        let vectors = vectors.as_standard_layout().into_owned();
        if vectors.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "embedding dimensionality must be at least 1".into(),
            ));
        }

        let mut index = HashMap::with_capacity(vocab.len());
        for (row, word) in vocab.iter().enumerate() {
            if index.insert(word.clone(), row).is_some() {
                return Err(Error::DuplicateWord {
                    line: row + 1,
                    word: word.clone(),
                });
            }
            if vectors.row(row).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    line: row + 1,
                    word: word.clone(),
                });
            }
        }

        Ok(EmbeddingMatrix {
            vocab,
            index,
            vectors,
            standardized: false,
        })
    }

    /// Number of words `m`.
    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    /// Embedding dimensionality `d`.
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn row(&self, index: usize) -> &[f64] {
        let d = self.dim();
        &self.vectors.as_slice().expect("standard layout")[index * d..(index + 1) * d]
    }

    /// The vector for `word`.
    pub fn lookup(&self, word: &str) -> Result<&[f64]> {
        self.index_of(word)
            .map(|i| self.row(i))
            .ok_or_else(|| Error::UnknownWord(word.to_owned()))
    }

    fn with_vectors(&self, vectors: Array2<f64>, standardized: bool) -> Self {
        EmbeddingMatrix {
            vocab: self.vocab.clone(),
            index: self.index.clone(),
            vectors,
            standardized,
        }
    }
}

/// Load embeddings from a text file.
pub fn load_embeddings(path: impl AsRef<Path>, format: TextFormat) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), format).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Read embeddings from a buffered text stream.
///
/// Blank lines are ignored. Line numbers in errors are 1-based and count
/// the header line when present.
pub fn read_embeddings<R: BufRead>(reader: R, format: TextFormat) -> Result<EmbeddingMatrix> {
    let mut declared: Option<(usize, usize)> = None;
    let mut dim: Option<usize> = None;
    let mut vocab = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut data = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io("<stream>", e))?;
        let mut fields = line.split_ascii_whitespace();
        let Some(word) = fields.next() else {
            continue;
        };

        if format == TextFormat::WithHeader && declared.is_none() {
            declared = Some(parse_header(word, fields, lineno)?);
            dim = declared.map(|(_, d)| d);
            continue;
        }

        let start = data.len();
        for field in fields {
            let value: f64 = field.parse().map_err(|_| Error::Malformed {
                line: lineno,
                message: format!("cannot parse {field:?} as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    line: lineno,
                    word: word.to_owned(),
                });
            }
            data.push(value);
        }
        let found = data.len() - start;
        match dim {
            None if found == 0 => {
                return Err(Error::Malformed {
                    line: lineno,
                    message: format!("word {word:?} has no vector components"),
                })
            }
            None => dim = Some(found),
            Some(expected) if expected != found => {
                return Err(Error::DimensionMismatchAtLine {
                    line: lineno,
                    expected,
                    found,
                })
            }
            Some(_) => {}
        }

        if index.insert(word.to_owned(), vocab.len()).is_some() {
            return Err(Error::DuplicateWord {
                line: lineno,
                word: word.to_owned(),
            });
        }
        vocab.push(word.to_owned());
    }

    if let Some((rows, _)) = declared {
        if rows != vocab.len() {
            return Err(Error::Malformed {
                line: 1,
                message: format!("header declares {rows} words, file has {}", vocab.len()),
            });
        }
    }
    let dim = dim.ok_or_else(|| Error::Malformed {
        line: 0,
        message: "no embeddings found".into(),
    })?;

    let vectors = Array2::from_shape_vec((vocab.len(), dim), data)
        .expect("row lengths were checked while reading");
    Ok(EmbeddingMatrix {
        vocab,
        index,
        vectors,
        standardized: false,
    })
}

fn parse_header<'a>(
    first: &str,
    mut rest: impl Iterator<Item = &'a str>,
    line: usize,
) -> Result<(usize, usize)> {
    let bad = || Error::Malformed {
        line,
        message: "expected header `m d`".into(),
    };
    let rows = first.parse().map_err(|_| bad())?;
    let dims: usize = rest.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    if rest.next().is_some() || dims == 0 {
        return Err(bad());
    }
    Ok((rows, dims))
}

/// Write embeddings in text format. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_embeddings<W: Write>(
    mut writer: W,
    embeddings: &EmbeddingMatrix,
    format: TextFormat,
) -> std::io::Result<()> {
    if format == TextFormat::WithHeader {
        writeln!(writer, "{} {}", embeddings.len(), embeddings.dim())?;
    }
    for (word, row) in embeddings.vocab.iter().zip(embeddings.vectors.rows()) {
        write!(writer, "{word}")?;
        for v in row {
            write!(writer, " {v}")?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

/// Per-dimension mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

impl StandardizationStats {
    /// Statistics over every word in the vocabulary.
    pub fn fit(embeddings: &EmbeddingMatrix) -> Result<Self> {
        let rows: Vec<usize> = (0..embeddings.len()).collect();
        Self::fit_rows(embeddings, &rows)
    }

    /// Statistics over a subset of rows, e.g. only the words that occur in
    /// the task data.
    pub fn fit_rows(embeddings: &EmbeddingMatrix, rows: &[usize]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::TooFewRows {
                required: 2,
                found: rows.len(),
            });
        }
        let n = rows.len() as f64;
        let dim = embeddings.dim();
        let mut means = vec![0.0; dim];
        let mut stddevs = vec![0.0; dim];

        for col in 0..dim {
            let column = embeddings.vectors.column(col);
            let mean = rows.iter().map(|&r| column[r]).sum::<f64>() / n;
            let var = rows
                .iter()
                .map(|&r| (column[r] - mean).powi(2))
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            let scale = rows.iter().map(|&r| column[r].abs()).fold(0.0, f64::max);
            if !(sd > f64::EPSILON * scale) {
                return Err(Error::ZeroVariance(col));
            }
            means[col] = mean;
            stddevs[col] = sd;
        }

        Ok(StandardizationStats { means, stddevs })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    /// `1/σᵢ` per dimension, the diagonal scaling that standardizes a
    /// PairDiff offset.
    pub fn inv_sigma(&self) -> Vec<f64> {
        self.stddevs.iter().map(|s| 1.0 / s).collect()
    }

    /// `xᵢ ← (xᵢ − μᵢ)/σᵢ` for every row.
    pub fn apply(&self, embeddings: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        self.check_dim(embeddings)?;
        let mut vectors = embeddings.vectors.clone();
        for mut row in vectors.rows_mut() {
            for ((x, mu), sd) in row.iter_mut().zip(&self.means).zip(&self.stddevs) {
                *x = (*x - mu) / sd;
            }
        }
        Ok(embeddings.with_vectors(vectors, true))
    }

    /// Undo [`StandardizationStats::apply`].
    pub fn invert(&self, embeddings: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        self.check_dim(embeddings)?;
        let mut vectors = embeddings.vectors.clone();
        for mut row in vectors.rows_mut() {
            for ((x, mu), sd) in row.iter_mut().zip(&self.means).zip(&self.stddevs) {
                *x = *x * sd + mu;
            }
        }
        Ok(embeddings.with_vectors(vectors, false))
    }

    fn check_dim(&self, embeddings: &EmbeddingMatrix) -> Result<()> {
        if embeddings.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: embeddings.dim(),
            });
        }
        Ok(())
    }
}

/// Standardize every dimension to zero mean and unit population variance,
/// with statistics taken over the full vocabulary.
pub fn standardize(
    embeddings: &EmbeddingMatrix,
) -> Result<(EmbeddingMatrix, StandardizationStats)> {
    let stats = StandardizationStats::fit(embeddings)?;
    let out = stats.apply(embeddings)?;
    Ok((out, stats))
}

/// One histogram bin over `[lower, upper)`; the last bin is closed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_lower: f64,
    pub bin_upper: f64,
    pub count: u64,
}

/// Cross-dimensional Pearson correlations of an embedding matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationReport {
    /// `d × d`, symmetric, unit diagonal.
    pub matrix: Array2<f64>,
    pub mean_abs_offdiag: f64,
    pub sd_offdiag: f64,
    pub histogram: Vec<HistogramBin>,
}

/// JSON form of a [`CorrelationReport`]; the matrix is optional.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub dim: usize,
    pub n_offdiag: usize,
    pub mean_abs_offdiag: f64,
    pub sd_offdiag: f64,
    pub mean_offdiag: f64,
    pub max_abs_offdiag: f64,
    pub bins: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub matrix: Option<Vec<Vec<f64>>>,
}

pub const DEFAULT_HISTOGRAM_BINS: usize = 100;

/// Pearson correlation between every pair of dimensions over all `m`
/// words, with summary statistics and a histogram of the `d(d−1)`
/// off-diagonal entries.
pub fn correlation_report(embeddings: &EmbeddingMatrix, bins: usize) -> Result<CorrelationReport> {
    if bins == 0 {
        return Err(Error::InvalidParameter(
            "histogram needs at least one bin".into(),
        ));
    }
    let m = embeddings.len();
    if m < 3 {
        return Err(Error::TooFewRows {
            required: 3,
            found: m,
        });
    }
    let d = embeddings.dim();

    // Centered columns, stored column-major for contiguous dot products.
    let means = embeddings.vectors.mean_axis(Axis(0)).expect("m >= 3");
    let mut centered = embeddings.vectors.t().to_owned();
    for (mut col, mu) in centered.rows_mut().into_iter().zip(means.iter()) {
        col.mapv_inplace(|x| x - mu);
    }
    let sums_sq: Vec<f64> = centered.rows().into_iter().map(|c| c.dot(&c)).collect();
    for (col, &ss) in sums_sq.iter().enumerate() {
        let scale = embeddings
            .vectors
            .column(col)
            .iter()
            .fold(0.0f64, |a, x| a.max(x.abs()));
        if !(ss.sqrt() > f64::EPSILON * scale * (m as f64).sqrt()) {
            return Err(Error::ZeroVariance(col));
        }
    }

    // Each entry is an independent fixed-order dot product, so the result
    // does not depend on how rows are scheduled.
    let upper: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|i| {
            let ci = centered.row(i);
            (i + 1..d)
                .map(|j| {
                    let r = ci.dot(&centered.row(j)) / (sums_sq[i] * sums_sq[j]).sqrt();
                    r.clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();

    let mut matrix = Array2::eye(d);
    for (i, row) in upper.iter().enumerate() {
        for (offset, &r) in row.iter().enumerate() {
            let j = i + 1 + offset;
            matrix[[i, j]] = r;
            matrix[[j, i]] = r;
        }
    }

    let offdiag: Vec<f64> = (0..d)
        .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| matrix[[i, j]])
        .collect();
    let n = offdiag.len();
    let (mean_abs_offdiag, sd_offdiag) = if n == 0 {
        (0.0, 0.0)
    } else {
        let mean_abs = offdiag.iter().map(|c| c.abs()).sum::<f64>() / n as f64;
        let mean = offdiag.iter().sum::<f64>() / n as f64;
        let var = offdiag.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n as f64;
        (mean_abs, var.sqrt())
    };

    let width = 2.0 / bins as f64;
    let mut histogram: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            bin_lower: -1.0 + b as f64 * width,
            bin_upper: if b + 1 == bins {
                1.0
            } else {
                -1.0 + (b + 1) as f64 * width
            },
            count: 0,
        })
        .collect();
    for c in &offdiag {
        let b = (((c + 1.0) / width).floor() as usize).min(bins - 1);
        histogram[b].count += 1;
    }

    Ok(CorrelationReport {
        matrix,
        mean_abs_offdiag,
        sd_offdiag,
        histogram,
    })
}

impl CorrelationReport {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn offdiag(&self) -> impl Iterator<Item = f64> + '_ {
        self.matrix
            .indexed_iter()
            .filter(|((i, j), _)| i != j)
            .map(|(_, &c)| c)
    }

    pub fn summary(&self, include_matrix: bool) -> CorrelationSummary {
        let d = self.dim();
        let n = d * d.saturating_sub(1);
        let mean_offdiag = if n == 0 {
            0.0
        } else {
            self.offdiag().sum::<f64>() / n as f64
        };
        CorrelationSummary {
            dim: d,
            n_offdiag: n,
            mean_abs_offdiag: self.mean_abs_offdiag,
            sd_offdiag: self.sd_offdiag,
            mean_offdiag,
            max_abs_offdiag: self.offdiag().fold(0.0, |a, c| a.max(c.abs())),
            bins: self.histogram.len(),
            matrix: include_matrix
                .then(|| self.matrix.rows().into_iter().map(|r| r.to_vec()).collect()),
        }
    }

    /// Histogram as CSV with header `bin_lower,bin_upper,count`.
    pub fn write_histogram_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        for bin in &self.histogram {
            csv.serialize(bin).map_err(csv_error)?;
        }
        csv.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::InvalidParameter(format!("CSV error: {e}"))
}
