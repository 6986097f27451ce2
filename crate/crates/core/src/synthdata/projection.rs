//! 1D voxel vectors ↔ 2D grids, and the spatial-contiguity diagnostic.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{CobraError, Result};
use crate::numerics::Rng;

/// Injective placement of voxel `i` at grid cell `cells[i]` (`row * width + col`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionMap {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<u32>,
}

/// Cells of a grid tiled by `block × block` pseudo-ROIs whose last `gap` rows
/// and columns are left empty. ROIs are visited in raster order, cells inside
/// an ROI in raster order.
pub fn roi_cell_order(height: usize, width: usize, block: usize, gap: usize) -> Vec<u32> {
    let mut cells = Vec::new();
    if block == 0 || gap >= block {
        return cells;
    }
    let inner = block - gap;
    for br in 0..height / block {
        for bc in 0..width / block {
            for dy in 0..inner {
                for dx in 0..inner {
                    let r = br * block + dy;
                    let c = bc * block + dx;
                    cells.push((r * width + c) as u32);
                }
            }
        }
    }
    cells
}

impl ProjectionMap {
    pub fn new(height: usize, width: usize, cells: Vec<u32>) -> Result<Self> {
        let map = ProjectionMap {
            height,
            width,
            cells,
        };
        map.validate()?;
        Ok(map)
    }

    /// Voxel `i` at cell `i` in row-major order.
    pub fn raster(height: usize, width: usize, voxels: usize) -> Result<Self> {
        Self::new(height, width, (0..voxels as u32).collect())
    }

    /// First `voxels` cells of [`roi_cell_order`].
    pub fn pseudo_roi(
        height: usize,
        width: usize,
        block: usize,
        gap: usize,
        voxels: usize,
    ) -> Result<Self> {
        let order = roi_cell_order(height, width, block, gap);
        if voxels > order.len() {
            return Err(CobraError::Config(format!(
                "{voxels} voxels do not fit in {} ROI cells",
                order.len()
            )));
        }
        Self::new(height, width, order[..voxels].to_vec())
    }

    /// `voxels` distinct cells in uniformly random order.
    pub fn shuffled(height: usize, width: usize, voxels: usize, rng: &mut Rng) -> Result<Self> {
        if voxels > height * width {
            return Err(CobraError::Config(format!(
                "{voxels} voxels exceed {} cells",
                height * width
            )));
        }
        let cells = rng
            .sample_indices(height * width, voxels)
            .into_iter()
            .map(|c| c as u32)
            .collect();
        Self::new(height, width, cells)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        let mut seen = vec![false; n];
        for &c in &self.cells {
            let c = c as usize;
            if c >= n {
                return Err(CobraError::Index { index: c, bound: n });
            }
            if seen[c] {
                return Err(CobraError::Contract(format!("cell {c} is mapped twice")));
            }
            seen[c] = true;
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.cells.len()
    }

    pub fn coords(&self, voxel: usize) -> (usize, usize) {
        let c = self.cells[voxel] as usize;
        (c / self.width, c % self.width)
    }

    /// Places voxel values on a zeroed `H × W` grid.
    pub fn project(&self, voxels: &[f32]) -> Result<Vec<f32>> {
        if voxels.len() != self.cells.len() {
            return Err(CobraError::dim(
                "project_1d_to_2d",
                format!("{} voxels for a map of {}", voxels.len(), self.cells.len()),
            ));
        }
        let mut grid = vec![0.0f32; self.height * self.width];
        for (&c, &v) in self.cells.iter().zip(voxels) {
            grid[c as usize] = v;
        }
        Ok(grid)
    }

    pub fn unproject(&self, grid: &[f32]) -> Result<Vec<f32>> {
        if grid.len() != self.height * self.width {
            return Err(CobraError::dim(
                "unproject",
                format!(
                    "grid of {} values, expected {}",
                    grid.len(),
                    self.height * self.width
                ),
            ));
        }
        Ok(self.cells.iter().map(|&c| grid[c as usize]).collect())
    }
}

/// Upper bin edges of the contiguity histogram; the last bin is open.
pub const DISTANCE_BINS: [f64; 5] = [1.0, std::f64::consts::SQRT_2, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Inclusive upper edge; `None` for the open last bin.
    pub upper: Option<f64>,
    pub count: usize,
}

/// Grid distances between voxels that are neighbours in the 1D ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContiguityReport {
    pub voxel_count: usize,
    pub pairs: usize,
    pub mean: Option<f64>,
    pub max: Option<f64>,
    /// Share of consecutive pairs that stay 8-adjacent (distance ≤ √2).
    pub adjacent_fraction: Option<f64>,
    /// Empty when there are no consecutive pairs.
    pub histogram: Vec<HistogramBin>,
}

pub fn consecutive_distances(map: &ProjectionMap) -> Vec<f64> {
    (1..map.voxel_count())
        .map(|i| {
            let (r0, c0) = map.coords(i - 1);
            let (r1, c1) = map.coords(i);
            let dr = r1 as f64 - r0 as f64;
            let dc = c1 as f64 - c0 as f64;
            (dr * dr + dc * dc).sqrt()
        })
        .collect()
}

pub fn contiguity_report(map: &ProjectionMap) -> ContiguityReport {
    let d = consecutive_distances(map);
    if d.is_empty() {
        return ContiguityReport {
            voxel_count: map.voxel_count(),
            pairs: 0,
            mean: None,
            max: None,
            adjacent_fraction: None,
            histogram: Vec::new(),
        };
    }
    let mut histogram: Vec<HistogramBin> = DISTANCE_BINS
        .iter()
        .map(|&u| HistogramBin {
            upper: Some(u),
            count: 0,
        })
        .chain(std::iter::once(HistogramBin {
            upper: None,
            count: 0,
        }))
        .collect();
    for &x in &d {
        let bin = DISTANCE_BINS
            .iter()
            .position(|&u| x <= u + 1e-12)
            .unwrap_or(DISTANCE_BINS.len());
        histogram[bin].count += 1;
    }
    let n = d.len() as f64;
    let adjacent = d
        .iter()
        .filter(|&&x| x <= std::f64::consts::SQRT_2 + 1e-12)
        .count();
    ContiguityReport {
        voxel_count: map.voxel_count(),
        pairs: d.len(),
        mean: Some(d.iter().sum::<f64>() / n),
        max: Some(d.iter().cloned().fold(0.0, f64::max)),
        adjacent_fraction: Some(adjacent as f64 / n),
        histogram,
    }
}

/// Where a run of consecutive voxels lands on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpread {
    pub start: usize,
    pub len: usize,
    /// 8-connected components formed by the run's cells.
    pub components: usize,
    pub bbox_rows: usize,
    pub bbox_cols: usize,
}

/// Marks voxels `start..start+len` on an empty grid and measures how
/// fragmented they are in 2D.
pub fn run_spread(map: &ProjectionMap, start: usize, len: usize) -> Result<RunSpread> {
    if len == 0 || start + len > map.voxel_count() {
        return Err(CobraError::Parameter(format!(
            "run {start}..{} outside {} voxels",
            start + len,
            map.voxel_count()
        )));
    }
    let (h, w) = (map.height, map.width);
    let mut on = vec![false; h * w];
    let (mut rmin, mut rmax, mut cmin, mut cmax) = (usize::MAX, 0, usize::MAX, 0);
    for v in start..start + len {
        let (r, c) = map.coords(v);
        on[r * w + c] = true;
        rmin = rmin.min(r);
        rmax = rmax.max(r);
        cmin = cmin.min(c);
        cmax = cmax.max(c);
    }
    let mut seen = vec![false; h * w];
    let mut components = 0;
    for cell in 0..h * w {
        if !on[cell] || seen[cell] {
            continue;
        }
        components += 1;
        let mut queue = VecDeque::from([cell]);
        seen[cell] = true;
        while let Some(x) = queue.pop_front() {
            let (r, c) = ((x / w) as isize, (x % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let n = nr as usize * w + nc as usize;
                    if on[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
    }
    Ok(RunSpread {
        start,
        len,
        components,
        bbox_rows: rmax - rmin + 1,
        bbox_cols: cmax - cmin + 1,
    })
}
