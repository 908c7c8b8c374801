//! Dense row-major 2D and 3D storage used by every lattice table.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Grid { rows, cols, data: vec![value; rows * cols] }
    }

    /// Builds from nested rows; `None` when rows are ragged or the count is wrong.
    pub fn from_rows(rows: usize, cols: usize, nested: Vec<Vec<T>>) -> Option<Self> {
        if nested.len() != rows || nested.iter().any(|r| r.len() != cols) {
            return None;
        }
        Some(Grid { rows, cols, data: nested.into_iter().flatten().collect() })
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        if self.cols == 0 {
            return vec![Vec::new(); self.rows];
        }
        self.data.chunks(self.cols).map(|c| c.to_vec()).collect()
    }

    pub fn map<S: Clone>(&self, f: impl Fn(&T) -> S) -> Grid<S> {
        Grid { rows: self.rows, cols: self.cols, data: self.data.iter().map(f).collect() }
    }
}

impl<T> Grid<T> {
    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        debug_assert!(row < self.rows && col < self.cols, "({row},{col}) outside {}x{}", self.rows, self.cols);
        &self.data[row * self.cols + col]
    }

    #[inline]
    pub fn get_mut(&mut self, row: usize, col: usize) -> &mut T {
        debug_assert!(row < self.rows && col < self.cols);
        &mut self.data[row * self.cols + col]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
}

/// A `rows x cols` grid of fixed-length vectors, e.g. one distribution over the
/// extended vocabulary per lattice cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    rows: usize,
    cols: usize,
    depth: usize,
    data: Vec<f64>,
}

impl Grid3 {
    pub fn zeros(rows: usize, cols: usize, depth: usize) -> Self {
        Grid3 { rows, cols, depth, data: vec![0.0; rows * cols * depth] }
    }

    pub fn from_vec(rows: usize, cols: usize, depth: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == rows * cols * depth).then_some(Grid3 { rows, cols, depth, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn depth(&self) -> usize {
        self.depth
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.cols + col) * self.depth;
        &self.data[start..start + self.depth]
    }

    #[inline]
    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let start = (row * self.cols + col) * self.depth;
        &mut self.data[start..start + self.depth]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}
