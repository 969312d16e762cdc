//! MatrixMarket coordinate (`real general`) export and import.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SparseMatrix};

const HEADER: &str = "%%MatrixMarket matrix coordinate real general";

pub fn write_sparse<W: Write>(out: &mut W, a: &SparseMatrix) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    writeln!(out, "{} {} {}", a.rows(), a.cols(), a.nnz())?;
    for (i, j, v) in a.triplets() {
        writeln!(out, "{} {} {:.16e}", i + 1, j + 1, v)?;
    }
    Ok(())
}

/// Dense matrices are written in coordinate form, skipping exact zeros.
pub fn write_dense<W: Write>(out: &mut W, a: &DenseMatrix) -> Result<()> {
    write_sparse(out, &SparseMatrix::from_dense(a))
}

pub fn save_sparse(path: impl AsRef<Path>, a: &SparseMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_sparse(&mut w, a)?;
    w.flush()?;
    Ok(())
}

pub fn save_dense(path: impl AsRef<Path>, a: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dense(&mut w, a)?;
    w.flush()?;
    Ok(())
}

pub fn read_sparse<R: BufRead>(input: R) -> Result<SparseMatrix> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty MatrixMarket file".into()))??;
    let lower = header.to_ascii_lowercase();
    if !lower.starts_with("%%matrixmarket matrix coordinate real") {
        return Err(Error::Parse(format!("unsupported MatrixMarket header: {header}")));
    }
    let symmetric = lower.contains("symmetric");

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_idx = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s}: {e}")));
        match size {
            None => {
                if fields.len() != 3 {
                    return Err(Error::Parse(format!("bad size line: {line}")));
                }
                size = Some((parse_idx(fields[0])?, parse_idx(fields[1])?, parse_idx(fields[2])?));
            }
            Some(_) => {
                if fields.len() != 3 {
                    return Err(Error::Parse(format!("bad entry line: {line}")));
                }
                let i = parse_idx(fields[0])?;
                let j = parse_idx(fields[1])?;
                if i == 0 || j == 0 {
                    return Err(Error::Parse("MatrixMarket indices are 1-based".into()));
                }
                let v: f64 = fields[2].parse().map_err(|e| Error::Parse(format!("{}: {e}", fields[2])))?;
                triplets.push((i - 1, j - 1, v));
                if symmetric && i != j {
                    triplets.push((j - 1, i - 1, v));
                }
            }
        }
    }
    let (rows, cols, nnz) = size.ok_or_else(|| Error::Parse("missing size line".into()))?;
    let declared = if symmetric { triplets.iter().filter(|t| t.0 >= t.1).count() } else { triplets.len() };
    if declared != nnz {
        return Err(Error::Parse(format!("expected {nnz} entries, found {declared}")));
    }
    SparseMatrix::from_triplets(rows, cols, &triplets)
}

pub fn load_sparse(path: impl AsRef<Path>) -> Result<SparseMatrix> {
    read_sparse(BufReader::new(File::open(path)?))
}
