//! Warehouse geometry: storage blocks, aisles, the picking station and
//! travel distances for loaded and unloaded robots.
//!
//! Unloaded robots drive underneath stored shelves, so they move freely on
//! the grid (Manhattan metric). Loaded robots are confined to aisle and
//! station cells; a storage cell may only appear as the first or last cell
//! of a loaded path.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("position {0} lies outside the {1}x{2} grid")]
    OutOfBounds(GridPosition, usize, usize),
    #[error("no aisle path between {0} and {1}")]
    NoPath(GridPosition, GridPosition),
    #[error("negative travel distance {0}")]
    NegativeDistance(f64),
    #[error("invalid layout configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPosition {
    pub col: usize,
    pub row: usize,
}

impl GridPosition {
    pub const fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }

    pub fn manhattan(self, other: GridPosition) -> usize {
        self.col.abs_diff(other.col) + self.row.abs_diff(other.row)
    }
}

impl fmt::Display for GridPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.col, self.row)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Storage,
    Aisle,
    Station,
    /// Padding next to the station; never traversed.
    Blocked,
}

impl CellKind {
    pub fn is_traversable_loaded(self) -> bool {
        matches!(self, CellKind::Aisle | CellKind::Station)
    }
}

/// A rectangular block of storage cells; the action space of zone-based policies.
#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    pub id: usize,
    /// Storage-cell indices, see [`Layout::storage_cells`].
    pub cells: Vec<usize>,
    pub capacity: usize,
}

/// Geometry and timing parameters. Readable from the `[layout]` section of
/// the experiment configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    /// Number of storage blocks side by side.
    pub blocks_across: usize,
    /// Number of storage blocks front to back.
    pub blocks_deep: usize,
    /// Width of one block in cells.
    pub block_width: usize,
    /// Depth of one block in cells.
    pub block_depth: usize,
    /// Meters per grid cell.
    pub cell_pitch: f64,
    /// Robot speed in m/s, loaded or not.
    pub speed: f64,
    /// Operator picking time per station visit, seconds.
    pub pick_time: f64,
    /// Robot load or unload time, seconds.
    pub handle_time: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            blocks_across: 3,
            blocks_deep: 2,
            block_width: 2,
            block_depth: 3,
            cell_pitch: 1.0,
            speed: 0.6,
            pick_time: 8.0,
            handle_time: 3.0,
        }
    }
}

/// Immutable warehouse description. Cheap to share behind an `Arc`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
    station: GridPosition,
    storage: Vec<GridPosition>,
    storage_index: Vec<Option<usize>>,
    cell_zone: Vec<usize>,
    zones: Vec<Zone>,
    /// All-pairs loaded step counts, `None` when unreachable.
    loaded_steps: Vec<Option<u32>>,
    pub cell_pitch: f64,
    pub speed: f64,
    pub pick_time: f64,
    pub handle_time: f64,
}

impl Default for Layout {
    fn default() -> Self {
        build_default_layout()
    }
}

/// The 36-cell reference warehouse: six 2x3 blocks in a 3x2 arrangement,
/// ringed by one-cell aisles, with the station below the front aisle.
pub fn build_default_layout() -> Layout {
    Layout::from_config(&LayoutConfig::default()).expect("default layout is valid")
}

impl Layout {
    pub fn from_config(cfg: &LayoutConfig) -> Result<Self, LayoutError> {
        if cfg.blocks_across == 0 || cfg.blocks_deep == 0 || cfg.block_width == 0 || cfg.block_depth == 0 {
            return Err(LayoutError::InvalidConfig("block counts and sizes must be positive".into()));
        }
        for (name, v) in [("cell_pitch", cfg.cell_pitch), ("speed", cfg.speed)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(LayoutError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("pick_time", cfg.pick_time), ("handle_time", cfg.handle_time)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(LayoutError::InvalidConfig(format!("{name} must be nonnegative, got {v}")));
            }
        }

        let width = cfg.blocks_across * (cfg.block_width + 1) + 1;
        let aisle_rows = cfg.blocks_deep * (cfg.block_depth + 1) + 1;
        let height = aisle_rows + 1;
        let station = GridPosition::new((width - 1) / 2, height - 1);

        let mut cells = vec![CellKind::Aisle; width * height];
        for col in 0..width {
            cells[(height - 1) * width + col] = CellKind::Blocked;
        }
        cells[station.row * width + station.col] = CellKind::Station;

        let mut blocks = Vec::new();
        for by in 0..cfg.blocks_deep {
            for bx in 0..cfg.blocks_across {
                let col0 = 1 + bx * (cfg.block_width + 1);
                let row0 = 1 + by * (cfg.block_depth + 1);
                let mut block = Vec::new();
                for row in row0..row0 + cfg.block_depth {
                    for col in col0..col0 + cfg.block_width {
                        cells[row * width + col] = CellKind::Storage;
                        block.push(GridPosition::new(col, row));
                    }
                }
                blocks.push(block);
            }
        }

        let mut storage: Vec<GridPosition> = blocks.iter().flatten().copied().collect();
        storage.sort_by_key(|p| (p.row, p.col));
        let mut storage_index = vec![None; width * height];
        for (i, p) in storage.iter().enumerate() {
            storage_index[p.row * width + p.col] = Some(i);
        }

        // Zone ids follow the distance from the block centroid to the station.
        let centroid_key = |block: &Vec<GridPosition>| {
            let n = block.len() as f64;
            let c = block.iter().map(|p| p.col as f64).sum::<f64>() / n;
            let r = block.iter().map(|p| p.row as f64).sum::<f64>() / n;
            (c - station.col as f64).abs() + (r - station.row as f64).abs()
        };
        blocks.sort_by(|a, b| {
            centroid_key(a)
                .total_cmp(&centroid_key(b))
                .then_with(|| (a[0].row, a[0].col).cmp(&(b[0].row, b[0].col)))
        });

        let mut cell_zone = vec![usize::MAX; storage.len()];
        let zones: Vec<Zone> = blocks
            .iter()
            .enumerate()
            .map(|(id, block)| {
                let mut idx: Vec<usize> = block
                    .iter()
                    .map(|p| storage_index[p.row * width + p.col].expect("block cell is storage"))
                    .collect();
                idx.sort_unstable();
                for &i in &idx {
                    cell_zone[i] = id;
                }
                Zone { id, capacity: idx.len(), cells: idx }
            })
            .collect();

        let mut layout = Layout {
            width,
            height,
            cells,
            station,
            storage,
            storage_index,
            cell_zone,
            zones,
            loaded_steps: Vec::new(),
            cell_pitch: cfg.cell_pitch,
            speed: cfg.speed,
            pick_time: cfg.pick_time,
            handle_time: cfg.handle_time,
        };
        layout.loaded_steps = layout.all_pairs_loaded_steps();
        for &s in &layout.storage {
            if layout.loaded_steps(layout.station, s).is_none() {
                return Err(LayoutError::NoPath(layout.station, s));
            }
        }
        Ok(layout)
    }

    fn all_pairs_loaded_steps(&self) -> Vec<Option<u32>> {
        let n = self.width * self.height;
        let mut table = vec![None; n * n];
        let mut queue = VecDeque::new();
        for src in 0..n {
            if self.cells[src] == CellKind::Blocked {
                continue;
            }
            let row = &mut table[src * n..(src + 1) * n];
            row[src] = Some(0);
            queue.clear();
            queue.push_back(src);
            while let Some(u) = queue.pop_front() {
                // Only the source and aisle/station cells may be passed through.
                if u != src && !self.cells[u].is_traversable_loaded() {
                    continue;
                }
                let d = row[u].expect("queued cells have a distance");
                let (col, r) = (u % self.width, u / self.width);
                let mut visit = |v: usize| {
                    if self.cells[v] != CellKind::Blocked && row[v].is_none() {
                        row[v] = Some(d + 1);
                        queue.push_back(v);
                    }
                };
                if col > 0 {
                    visit(u - 1);
                }
                if col + 1 < self.width {
                    visit(u + 1);
                }
                if r > 0 {
                    visit(u - self.width);
                }
                if r + 1 < self.height {
                    visit(u + self.width);
                }
            }
        }
        table
    }

    fn loaded_steps(&self, a: GridPosition, b: GridPosition) -> Option<u32> {
        let n = self.width * self.height;
        self.loaded_steps[self.flat(a) * n + self.flat(b)]
    }

    fn flat(&self, p: GridPosition) -> usize {
        p.row * self.width + p.col
    }

    fn check(&self, p: GridPosition) -> Result<(), LayoutError> {
        if p.col < self.width && p.row < self.height {
            Ok(())
        } else {
            Err(LayoutError::OutOfBounds(p, self.width, self.height))
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn station(&self) -> GridPosition {
        self.station
    }

    pub fn cell_kind(&self, p: GridPosition) -> Result<CellKind, LayoutError> {
        self.check(p)?;
        Ok(self.cells[self.flat(p)])
    }

    /// Storage cells in (row, col) order; a storage-cell index refers into this slice.
    pub fn storage_cells(&self) -> &[GridPosition] {
        &self.storage
    }

    pub fn storage_index(&self, p: GridPosition) -> Option<usize> {
        if p.col < self.width && p.row < self.height {
            self.storage_index[self.flat(p)]
        } else {
            None
        }
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn zone_count(&self) -> usize {
        self.zones.len()
    }

    pub fn zone_of(&self, cell: usize) -> usize {
        self.cell_zone[cell]
    }

    pub fn unloaded_distance(&self, a: GridPosition, b: GridPosition) -> Result<f64, LayoutError> {
        self.check(a)?;
        self.check(b)?;
        Ok(a.manhattan(b) as f64 * self.cell_pitch)
    }

    pub fn loaded_distance(&self, a: GridPosition, b: GridPosition) -> Result<f64, LayoutError> {
        self.check(a)?;
        self.check(b)?;
        self.loaded_steps(a, b)
            .map(|s| s as f64 * self.cell_pitch)
            .ok_or(LayoutError::NoPath(a, b))
    }

    pub fn travel_time(&self, distance: f64) -> Result<f64, LayoutError> {
        if distance < 0.0 || distance.is_nan() {
            return Err(LayoutError::NegativeDistance(distance));
        }
        Ok(distance / self.speed)
    }

    /// Loaded grid steps between the station and a storage cell (either direction).
    pub fn station_leg_steps(&self, cell: usize) -> usize {
        self.loaded_steps(self.station, self.storage[cell])
            .expect("storage cells are reachable from the station") as usize
    }

    /// Unloaded grid steps between two storage cells.
    pub fn interleave_steps(&self, from: usize, to: usize) -> usize {
        self.storage[from].manhattan(self.storage[to])
    }

    pub fn steps_to_seconds(&self, steps: usize) -> f64 {
        steps as f64 * self.cell_pitch / self.speed
    }

    /// Loaded travel seconds between the station and a storage cell (either direction).
    pub fn station_leg_seconds(&self, cell: usize) -> f64 {
        self.steps_to_seconds(self.station_leg_steps(cell))
    }

    /// Unloaded travel seconds between two storage cells.
    pub fn interleave_seconds(&self, from: usize, to: usize) -> f64 {
        self.steps_to_seconds(self.interleave_steps(from, to))
    }

    /// Unloaded travel seconds from the station to a storage cell.
    pub fn station_unloaded_seconds(&self, cell: usize) -> f64 {
        self.station.manhattan(self.storage[cell]) as f64 * self.cell_pitch / self.speed
    }

    /// Free cell of `zone` nearest to the station; ties go to the smaller (row, col).
    /// `occupied[i]` tells whether storage cell `i` is taken.
    pub fn closest_open_location(&self, occupied: &[bool], zone: &Zone) -> Option<usize> {
        zone.cells
            .iter()
            .copied()
            .filter(|&c| !occupied[c])
            .min_by_key(|&c| {
                let p = self.storage[c];
                (p.manhattan(self.station), p.row, p.col)
            })
    }
}
