//! Row-major feature matrix with binary labels, plus its on-disk format.
//!
//! File layout (little-endian): magic `WSVD`, `u32` version, `u32` rows,
//! `u32` cols, then `rows * cols` `f32` features and `rows` `f32` labels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"WSVD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub cols: usize,
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, row: &[f64], label: f64) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::DimensionMismatch {
                what: "dataset row",
                expected: self.cols,
                got: row.len(),
            });
        }
        self.features.extend_from_slice(row);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.cols..(i + 1) * self.cols]
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|y| **y >= 0.5).count()
    }

    pub fn positive_rate(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.positives() as f64 / self.len() as f64
        }
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.cols);
        for &i in rows {
            out.features.extend_from_slice(self.row(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        emit(MAGIC)?;
        emit(&VERSION.to_le_bytes())?;
        emit(&u32_of(self.len(), path)?.to_le_bytes())?;
        emit(&u32_of(self.cols, path)?.to_le_bytes())?;
        for v in self.features.iter().chain(&self.labels) {
            emit(&(*v as f32).to_le_bytes())?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Dataset> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing dataset header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        if word(4) != VERSION as usize {
            return Err(bad("unsupported dataset version"));
        }
        let (rows, cols) = (word(8), word(12));
        let floats = read_f32s(&bytes[16..]).ok_or_else(|| bad("truncated float payload"))?;
        if floats.len() != rows * cols + rows {
            return Err(bad("payload size does not match header"));
        }
        let (features, labels) = floats.split_at(rows * cols);
        Ok(Dataset {
            cols,
            features: features.to_vec(),
            labels: labels.to_vec(),
        })
    }
}

pub(crate) fn u32_of(n: usize, path: &Path) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        reason: format!("{n} exceeds the u32 header field"),
    })
}

pub(crate) fn read_f32s(bytes: &[u8]) -> Option<Vec<f64>> {
    if !bytes.len().is_multiple_of(4) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect(),
    )
}
