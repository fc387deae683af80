use std::fmt;
use std::str::FromStr;

use crate::error::{config_err, shape_err, Error, Result};

/// Requested patch layout `rows × cols`, independent of any feature size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridSize {
    pub rows: usize,
    pub cols: usize,
}

impl GridSize {
    pub const SINGLE: GridSize = GridSize { rows: 1, cols: 1 };

    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(config_err!(
                "grid {}x{} must have at least one row and column",
                rows,
                cols
            ));
        }
        Ok(Self { rows, cols })
    }

    /// Most square layout with exactly `n` patches (`rows <= cols`).
    pub fn from_count(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(config_err!("patch count must be >= 1"));
        }
        let rows = (1..=n)
            .take_while(|r| r * r <= n)
            .filter(|r| n.is_multiple_of(*r))
            .last()
            .unwrap_or(1);
        Self::new(rows, n / rows)
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols
    }
}

impl fmt::Display for GridSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for GridSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| config_err!("grid '{}' is not of the form RxC", s))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| config_err!("grid '{}' is not of the form RxC", s))
        };
        Self::new(parse(r)?, parse(c)?)
    }
}

/// Partition of an `H × W` plane into `rows × cols` rectangles.
///
/// Patches are `H / rows` tall (integer division); the last row absorbs the
/// remainder, and likewise for columns. Patch `p` is at row `p / cols`,
/// column `p % cols`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    rows: usize,
    cols: usize,
    row_bounds: Vec<usize>,
    col_bounds: Vec<usize>,
    row_of: Vec<usize>,
    col_of: Vec<usize>,
}

fn bounds(parts: usize, len: usize) -> Vec<usize> {
    let step = len / parts;
    let mut b: Vec<usize> = (0..parts).map(|i| i * step).collect();
    b.push(len);
    b
}

fn owner(bounds: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(*bounds.last().unwrap_or(&0));
    for (i, w) in bounds.windows(2).enumerate() {
        out.extend(std::iter::repeat_n(i, w[1] - w[0]));
    }
    out
}

impl PatchGrid {
    pub fn fit(size: GridSize, height: usize, width: usize) -> Result<Self> {
        if size.rows == 0 || size.cols == 0 {
            return Err(shape_err!("empty grid {}", size));
        }
        if size.rows > height || size.cols > width {
            return Err(shape_err!(
                "grid {} larger than feature plane {}x{}",
                size,
                height,
                width
            ));
        }
        let row_bounds = bounds(size.rows, height);
        let col_bounds = bounds(size.cols, width);
        Ok(Self {
            rows: size.rows,
            cols: size.cols,
            row_of: owner(&row_bounds),
            col_of: owner(&col_bounds),
            row_bounds,
            col_bounds,
        })
    }

    pub fn size(&self) -> GridSize {
        GridSize {
            rows: self.rows,
            cols: self.cols,
        }
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn count(&self) -> usize {
        self.rows * self.cols
    }
    pub fn height(&self) -> usize {
        *self.row_bounds.last().unwrap()
    }
    pub fn width(&self) -> usize {
        *self.col_bounds.last().unwrap()
    }
    pub fn row_bounds(&self) -> &[usize] {
        &self.row_bounds
    }
    pub fn col_bounds(&self) -> &[usize] {
        &self.col_bounds
    }

    /// Patch index of pixel `(y, x)`.
    #[inline]
    pub fn patch_at(&self, y: usize, x: usize) -> usize {
        self.row_of[y] * self.cols + self.col_of[x]
    }

    /// Per-column patch-column lookup.
    pub(crate) fn col_owner(&self) -> &[usize] {
        &self.col_of
    }
    pub(crate) fn row_owner(&self) -> &[usize] {
        &self.row_of
    }

    /// Number of pixels in patch `p`.
    pub fn area(&self, p: usize) -> usize {
        let (r, c) = (p / self.cols, p % self.cols);
        (self.row_bounds[r + 1] - self.row_bounds[r])
            * (self.col_bounds[c + 1] - self.col_bounds[c])
    }

    pub fn matches(&self, height: usize, width: usize) -> bool {
        self.height() == height && self.width() == width
    }
}
