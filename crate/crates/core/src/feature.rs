//! Per-agent BEV feature grids and their validity masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl std::fmt::Display for AgentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An `H×W×C` feature grid produced by one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub agent: AgentId,
    /// Capture time in seconds.
    pub timestamp: f64,
    pub data: Tensor,
}

impl FeatureMap {
    pub fn new(agent: AgentId, timestamp: f64, data: Tensor) -> Result<Self> {
        data.dims3()?;
        Ok(FeatureMap {
            agent,
            timestamp,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.data.dims3().expect("feature map is rank 3")
    }

    pub fn with_data(&self, data: Tensor) -> Self {
        FeatureMap {
            agent: self.agent,
            timestamp: self.timestamp,
            data,
        }
    }
}

/// Boolean `H×W` grid marking cells that carry real (non-padded) content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

impl RoiMask {
    pub fn new(rows: usize, cols: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(Error::dim(format!(
                "mask {rows}x{cols} given {} cells",
                cells.len()
            )));
        }
        Ok(RoiMask { rows, cols, cells })
    }

    pub fn all_true(rows: usize, cols: usize) -> Self {
        RoiMask {
            rows,
            cols,
            cells: vec![true; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.cells[row * self.cols + col] = v;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn and(&self, other: &RoiMask) -> Result<RoiMask> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::dim("mask shapes differ"));
        }
        Ok(RoiMask {
            rows: self.rows,
            cols: self.cols,
            cells: self.cells.iter().zip(&other.cells).map(|(a, b)| *a && *b).collect(),
        })
    }

    pub(crate) fn matches(&self, map: &Tensor) -> bool {
        matches!(map.shape(), [h, w, _] if *h == self.rows && *w == self.cols)
    }
}

/// Placement of the BEV feature grid around the ego vehicle.
///
/// Rows run along the ego x axis (forward), columns along y (left); cell
/// `(i, j)` is centred at `((i + 0.5 - H/2)·s, (j + 0.5 - W/2)·s)` metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Edge length of one feature cell in metres.
    pub cell_size: f64,
}

impl GridSpec {
    /// Derives the feature grid from an evaluation range.
    ///
    /// The feature cell is `voxel · stride` metres, and each axis cell count is
    /// rounded to the nearest nonzero multiple of `multiple` (the largest
    /// attention window), so `[-140, 140] × [-40, 40]` at 0.4 m voxels with a
    /// stride-4 backbone gives the 176×48 grid.
    pub fn from_range(
        x_range: [f64; 2],
        y_range: [f64; 2],
        voxel: f64,
        stride: usize,
        multiple: usize,
    ) -> Result<Self> {
        if voxel <= 0.0 || stride == 0 || multiple == 0 {
            return Err(Error::config("voxel, stride and multiple must be positive"));
        }
        let cell = voxel * stride as f64;
        let fit = |span: f64| -> Result<usize> {
            if span <= 0.0 {
                return Err(Error::config("evaluation range must have positive extent"));
            }
            let raw = span / cell;
            let n = ((raw / multiple as f64).round() as usize).max(1);
            Ok(n * multiple)
        };
        Ok(GridSpec {
            rows: fit(x_range[1] - x_range[0])?,
            cols: fit(y_range[1] - y_range[0])?,
            cell_size: cell,
        })
    }

    /// Metric centre of cell `(row, col)` in the grid frame.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (row as f64 + 0.5 - self.rows as f64 / 2.0) * self.cell_size,
            (col as f64 + 0.5 - self.cols as f64 / 2.0) * self.cell_size,
        )
    }

    /// Cell containing the metric point, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let r = (x / self.cell_size + self.rows as f64 / 2.0).floor();
        let c = (y / self.cell_size + self.cols as f64 / 2.0).floor();
        if r < 0.0 || c < 0.0 || r >= self.rows as f64 || c >= self.cols as f64 {
            None
        } else {
            Some((r as usize, c as usize))
        }
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_range_gives_table_grid() {
        let g = GridSpec::from_range([-140.0, 140.0], [-40.0, 40.0], 0.4, 4, 16).unwrap();
        assert_eq!((g.rows, g.cols), (176, 48));
        assert!((g.cell_size - 1.6).abs() < 1e-12);
    }

    #[test]
    fn cell_center_roundtrip() {
        let g = GridSpec { rows: 8, cols: 4, cell_size: 0.5 };
        for r in 0..8 {
            for c in 0..4 {
                let (x, y) = g.cell_center(r, c);
                assert_eq!(g.cell_of(x, y), Some((r, c)));
            }
        }
        assert_eq!(g.cell_of(10.0, 0.0), None);
    }

    #[test]
    fn mask_and() {
        let a = RoiMask::new(1, 2, vec![true, true]).unwrap();
        let b = RoiMask::new(1, 2, vec![false, true]).unwrap();
        assert_eq!(a.and(&b).unwrap().cells(), &[false, true]);
        assert!(RoiMask::new(2, 2, vec![true]).is_err());
    }
}
