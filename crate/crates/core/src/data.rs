//! Row-major design/response chunks shared by every engine.

use crate::error::{Error, Result};

/// A contiguous group of observations: design rows (intercept column first)
/// with their responses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chunk {
    width: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Chunk {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn with_capacity(width: usize, rows: usize) -> Self {
        Self {
            width,
            x: Vec::with_capacity(width * rows),
            y: Vec::with_capacity(rows),
        }
    }

    /// Builds a chunk from design rows and responses.
    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        if rows.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                found: y.len(),
            });
        }
        let width = rows.first().map_or(0, Vec::len);
        let mut chunk = Chunk::with_capacity(width, rows.len());
        for (row, &yi) in rows.iter().zip(y) {
            chunk.push(row, yi)?;
        }
        Ok(chunk)
    }

    pub fn push(&mut self, row: &[f64], y: f64) -> Result<()> {
        if row.len() != self.width {
            return Err(Error::DimensionMismatch {
                expected: self.width,
                found: row.len(),
            });
        }
        self.x.extend_from_slice(row);
        self.y.push(y);
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.width..(i + 1) * self.width]
    }

    pub fn response(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.x
            .chunks_exact(self.width.max(1))
            .zip(self.y.iter().copied())
    }

    /// Copies the rows `start..end` into a new chunk.
    pub fn slice(&self, start: usize, end: usize) -> Chunk {
        Chunk {
            width: self.width,
            x: self.x[start * self.width..end * self.width].to_vec(),
            y: self.y[start..end].to_vec(),
        }
    }

    /// Copies the rows at the given indices, in order.
    pub fn select(&self, idx: &[usize]) -> Chunk {
        let mut out = Chunk::with_capacity(self.width, idx.len());
        for &i in idx {
            out.x.extend_from_slice(self.row(i));
            out.y.push(self.y[i]);
        }
        out
    }

    pub fn extend(&mut self, other: &Chunk) -> Result<()> {
        if other.width != self.width {
            return Err(Error::DimensionMismatch {
                expected: self.width,
                found: other.width,
            });
        }
        self.x.extend_from_slice(&other.x);
        self.y.extend_from_slice(&other.y);
        Ok(())
    }

    /// Splits into consecutive chunks of at most `size` rows.
    pub fn split(&self, size: usize) -> Vec<Chunk> {
        let size = size.max(1);
        (0..self.len())
            .step_by(size)
            .map(|s| self.slice(s, (s + size).min(self.len())))
            .collect()
    }

    /// True when every design entry and response in row `i` is finite.
    pub fn row_is_finite(&self, i: usize) -> bool {
        self.y[i].is_finite() && self.row(i).iter().all(|v| v.is_finite())
    }
}
