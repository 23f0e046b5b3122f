//! Dense row-major 2D grids and cell coordinates.
//!
//! All grids in this crate are indexed `(row, col)` with row 0 at the top of
//! the map. Headings follow the same convention: 0° points north (row − 1),
//! 90° points east (col + 1).

use serde::{Deserialize, Serialize};

/// A grid cell `(row, col)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Manhattan distance in cells.
    pub fn manhattan(self, other: Cell) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    /// Euclidean distance in cells.
    pub fn euclidean(self, other: Cell) -> f64 {
        let dr = self.row as f64 - other.row as f64;
        let dc = self.col as f64 - other.col as f64;
        (dr * dr + dc * dc).sqrt()
    }

    /// Offset by a signed delta, `None` if it would leave the non-negative quadrant.
    pub fn offset(self, dr: isize, dc: isize) -> Option<Cell> {
        let row = self.row.checked_add_signed(dr)?;
        let col = self.col.checked_add_signed(dc)?;
        Some(Cell { row, col })
    }
}

impl From<[usize; 2]> for Cell {
    fn from([row, col]: [usize; 2]) -> Self {
        Cell { row, col }
    }
}

impl From<Cell> for [usize; 2] {
    fn from(c: Cell) -> Self {
        [c.row, c.col]
    }
}

impl From<(usize, usize)> for Cell {
    fn from((row, col): (usize, usize)) -> Self {
        Cell { row, col }
    }
}

/// 4-neighbourhood offsets: north, east, south, west.
pub const NEIGHBORS_4: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

/// 8-neighbourhood offsets.
pub const NEIGHBORS_8: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Row-major `height × width` grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

impl<T> Grid<T> {
    /// Wraps an existing row-major buffer. Returns `None` on length mismatch.
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == height * width).then_some(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(Cell) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                data.push(f(Cell { row, col }));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.row < self.height && cell.col < self.width
    }

    /// In-bounds check for signed coordinates.
    #[inline]
    pub fn contains(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    #[inline]
    pub fn index_of(&self, cell: Cell) -> usize {
        debug_assert!(self.in_bounds(cell));
        cell.row * self.width + cell.col
    }

    #[inline]
    pub fn cell_of(&self, index: usize) -> Cell {
        Cell {
            row: index / self.width,
            col: index % self.width,
        }
    }

    #[inline]
    pub fn get(&self, cell: Cell) -> Option<&T> {
        self.in_bounds(cell).then(|| &self.data[cell.row * self.width + cell.col])
    }

    #[inline]
    pub fn get_mut(&mut self, cell: Cell) -> Option<&mut T> {
        if self.in_bounds(cell) {
            Some(&mut self.data[cell.row * self.width + cell.col])
        } else {
            None
        }
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

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    /// Iterates `(cell, &value)` in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (Cell, &T)> + '_ {
        let w = self.width;
        self.data.iter().enumerate().map(move |(i, v)| {
            (
                Cell {
                    row: i / w,
                    col: i % w,
                },
                v,
            )
        })
    }

    /// In-bounds 4-neighbours of `cell`, in N, E, S, W order.
    pub fn neighbors4(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        NEIGHBORS_4
            .iter()
            .filter_map(move |&(dr, dc)| cell.offset(dr, dc).filter(|c| self.in_bounds(*c)))
    }

    /// In-bounds 8-neighbours of `cell`.
    pub fn neighbors8(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        NEIGHBORS_8
            .iter()
            .filter_map(move |&(dr, dc)| cell.offset(dr, dc).filter(|c| self.in_bounds(*c)))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.shape() == other.shape()
    }
}

impl<T> std::ops::Index<Cell> for Grid<T> {
    type Output = T;

    #[inline]
    fn index(&self, cell: Cell) -> &T {
        assert!(self.in_bounds(cell), "cell {cell:?} out of bounds");
        &self.data[cell.row * self.width + cell.col]
    }
}

impl<T> std::ops::IndexMut<Cell> for Grid<T> {
    #[inline]
    fn index_mut(&mut self, cell: Cell) -> &mut T {
        assert!(self.in_bounds(cell), "cell {cell:?} out of bounds");
        &mut self.data[cell.row * self.width + cell.col]
    }
}

/// Occupancy values used by belief grids.
pub mod occ {
    pub const FREE: f32 = 0.0;
    pub const UNKNOWN: f32 = 0.5;
    pub const OCCUPIED: f32 = 1.0;

    #[inline]
    pub fn is_free(v: f32) -> bool {
        v == FREE
    }

    #[inline]
    pub fn is_unknown(v: f32) -> bool {
        v == UNKNOWN
    }

    #[inline]
    pub fn is_occupied(v: f32) -> bool {
        v == OCCUPIED
    }
}
