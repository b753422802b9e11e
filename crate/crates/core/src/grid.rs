//! Frame-pool sampling and the K×K grid with its row and column views.
//!
//! Rows group K contiguous frames (local temporal coverage); columns group K
//! frames at stride K (periodic coverage over the whole timeline). Cell
//! `(r, c)` is pool frame `r*K + c`.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::GridError;

/// Where the pixels of a frame come from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum FrameSource {
    Image(PathBuf),
    Synthetic(String),
}

impl fmt::Display for FrameSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameSource::Image(p) => write!(f, "{}", p.display()),
            FrameSource::Synthetic(id) => write!(f, "synthetic:{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub pool_index: usize,
    pub source_index: usize,
    pub source: FrameSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Row,
    Column,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSubset {
    pub axis: Axis,
    pub axis_index: usize,
    pub frames: Vec<FrameRef>,
}

impl FrameSubset {
    pub fn pool_indices(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.pool_index).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    k: usize,
    cells: Vec<FrameRef>,
}

/// Center-of-bin uniform sampling: `floor((i + 0.5) * n / count)` for each
/// `i < count`, clamped to the last source frame. Indices repeat when the
/// source is shorter than the pool.
pub fn sample_uniform(n_source_frames: usize, count: usize) -> Result<Vec<usize>, GridError> {
    if n_source_frames == 0 || count == 0 {
        return Err(GridError::EmptySampling {
            available: n_source_frames,
            requested: count,
        });
    }
    let n = n_source_frames as u128;
    let total = count as u128;
    // (2i + 1) * n / (2 * count) is the same floor without float rounding.
    Ok((0..count as u128)
        .map(|i| {
            let idx = ((2 * i + 1) * n) / (2 * total);
            (idx as usize).min(n_source_frames - 1)
        })
        .collect())
}

/// Builds a pool of `k*k` synthetic frame references `prefix/0..k*k`.
pub fn synthetic_pool(prefix: &str, k: usize) -> Vec<FrameRef> {
    (0..k * k)
        .map(|i| FrameRef {
            pool_index: i,
            source_index: i,
            source: FrameSource::Synthetic(format!("{prefix}/{i}")),
        })
        .collect()
}

impl Grid {
    /// Lays the pool out row-major. Pool indices are reassigned to the
    /// position in `pool`, so the caller's order is the timeline order.
    pub fn build(pool: Vec<FrameRef>, k: usize) -> Result<Self, GridError> {
        if k < 2 {
            return Err(GridError::SideTooSmall(k));
        }
        if pool.len() != k * k {
            return Err(GridError::PoolSize {
                k,
                expected: k * k,
                actual: pool.len(),
            });
        }
        let cells = pool
            .into_iter()
            .enumerate()
            .map(|(i, mut f)| {
                f.pool_index = i;
                f
            })
            .collect();
        Ok(Self { k, cells })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[FrameRef] {
        &self.cells
    }

    pub fn cell(&self, r: usize, c: usize) -> Option<&FrameRef> {
        if r >= self.k || c >= self.k {
            return None;
        }
        self.cells.get(r * self.k + c)
    }

    pub fn frame(&self, pool_index: usize) -> Option<&FrameRef> {
        self.cells.get(pool_index)
    }

    /// Row `r`: pool indices `rK .. rK+K`.
    pub fn row_subset(&self, r: usize) -> Result<FrameSubset, GridError> {
        self.check(Axis::Row, r)?;
        Ok(FrameSubset {
            axis: Axis::Row,
            axis_index: r,
            frames: self.cells[r * self.k..(r + 1) * self.k].to_vec(),
        })
    }

    /// Column `c`: pool indices `c, c+K, .., c+(K-1)K`.
    pub fn col_subset(&self, c: usize) -> Result<FrameSubset, GridError> {
        self.check(Axis::Column, c)?;
        Ok(FrameSubset {
            axis: Axis::Column,
            axis_index: c,
            frames: self.cells.iter().skip(c).step_by(self.k).cloned().collect(),
        })
    }

    pub fn subset(&self, axis: Axis, index: usize) -> Result<FrameSubset, GridError> {
        match axis {
            Axis::Row => self.row_subset(index),
            Axis::Column => self.col_subset(index),
        }
    }

    fn check(&self, axis: Axis, index: usize) -> Result<(), GridError> {
        if index >= self.k {
            return Err(GridError::AxisIndex {
                axis,
                index,
                k: self.k,
            });
        }
        Ok(())
    }
}
