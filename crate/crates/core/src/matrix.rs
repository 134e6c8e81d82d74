//! Dense row-major matrices used throughout the mesh, tiling and inference code.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

pub type MatI8 = Matrix<i8>;
pub type MatI32 = Matrix<i32>;

impl<T: Copy + Default> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies the `rows`x`cols` window starting at (`r0`, `c0`); cells past the
    /// source edge read as `T::default()`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |r, c| {
            let (sr, sc) = (r0 + r, c0 + c);
            if sr < self.rows && sc < self.cols {
                self.get(sr, sc)
            } else {
                T::default()
            }
        })
    }

    /// Writes `src` at (`r0`, `c0`), dropping cells that fall outside `self`.
    pub fn put_block(&mut self, r0: usize, c0: usize, src: &Self) {
        for r in 0..src.rows {
            for c in 0..src.cols {
                let (dr, dc) = (r0 + r, c0 + c);
                if dr < self.rows && dc < self.cols {
                    self.set(dr, dc, src.get(r, c));
                }
            }
        }
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl MatI32 {
    pub fn wrapping_add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.wrapping_add(*b))
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Positions where `self` and `other` differ, row-major.
    pub fn diff_cells(&self, other: &Self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.rows.min(other.rows) {
            for c in 0..self.cols.min(other.cols) {
                if self.get(r, c) != other.get(r, c) {
                    out.push((r, c));
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in 0..self.rows {
            let line: Vec<String> = self.row(r).iter().map(i32::to_string).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_pads_with_zero() {
        let m = Matrix::from_rows(&[vec![1i32, 2], vec![3, 4]]).unwrap();
        let b = m.block(1, 1, 2, 2);
        assert_eq!(b.as_slice(), &[4, 0, 0, 0]);
    }

    #[test]
    fn put_block_clips() {
        let mut m = MatI32::zeros(2, 2);
        let src = Matrix::from_rows(&[vec![7, 8], vec![9, 10]]).unwrap();
        m.put_block(1, 0, &src);
        assert_eq!(m.as_slice(), &[0, 0, 7, 8]);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(Matrix::from_rows(&[vec![1i8, 2], vec![3]]).is_err());
    }
}
