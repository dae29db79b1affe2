//! Whitespace-separated text rows: `H·W` pixel values then the label.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parses a 28×28, 10-class amat file and splits it into the first
/// `train` rows and the following `test` rows. Extra rows are ignored.
pub fn parse_amat(
    path: impl AsRef<Path>,
    (train, test): (usize, usize),
    transpose: bool,
) -> Result<(Dataset, Dataset)> {
    let all = read_amat(path, (28, 28), 10, transpose)?;
    if all.len() < train + test {
        return Err(Error::OutOfRange {
            what: "amat split sizes (train + test)",
            value: train + test,
            bound: all.len() + 1,
        });
    }
    let (head, rest) = all.split_at(train)?;
    Ok((head, rest.take(test).with_split(Split::Test)))
}

/// Parses an amat file of `(h, w)` single-channel images.
///
/// With `transpose`, each row's pixels are stored column-major and are
/// transposed back to row-major.
pub fn read_amat(
    path: impl AsRef<Path>,
    (h, w): (usize, usize),
    num_classes: usize,
    transpose: bool,
) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cols = h * w + 1;
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut row = Vec::with_capacity(cols);
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != cols {
            return Err(Error::ColumnCount {
                path: path.to_path_buf(),
                line: lineno,
                expected: cols,
                found: tokens.len(),
            });
        }
        row.clear();
        for tok in &tokens {
            let v: f64 = tok.parse().map_err(|_| Error::NonNumeric {
                path: path.to_path_buf(),
                line: lineno,
                token: tok.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumeric {
                    path: path.to_path_buf(),
                    line: lineno,
                    token: tok.to_string(),
                });
            }
            row.push(v);
        }
        let label = row[h * w];
        if label < 0.0 || label.fract() != 0.0 {
            return Err(Error::NonNumeric {
                path: path.to_path_buf(),
                line: lineno,
                token: tokens[h * w].to_string(),
            });
        }
        labels.push(label as usize);
        if transpose {
            pixels.extend((0..h * w).map(|k| row[(k % w) * h + k / w]));
        } else {
            pixels.extend_from_slice(&row[..h * w]);
        }
    }
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, 1, h, w], pixels)?, labels, num_classes)
}

/// Writes `data` in amat layout; values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_amat(path: impl AsRef<Path>, data: &Dataset, transpose: bool) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = data.sample_shape();
    if c != 1 {
        return Err(Error::Config(format!(
            "amat holds single-channel images, got {c} channels"
        )));
    }
    let mut out = String::new();
    for (i, &label) in data.labels.iter().enumerate() {
        let img = data.images.slab(i);
        for k in 0..h * w {
            let v = if transpose { img[(k % h) * w + k / h] } else { img[k] };
            write!(out, "{v:?} ").unwrap();
        }
        writeln!(out, "{label}").unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
