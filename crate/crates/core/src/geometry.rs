//! 2D rack geometry and robot motion times.
//!
//! Cartridges fill every cell of a `rows × cols` rack with unit spacing;
//! cartridge `i` lives at `(i / cols, i % cols)`. Drives are mounted on the
//! aisle plane one unit in front of the rack at their `(row, col)` position,
//! so the robot travels `sqrt(dr² + dc² + 1)` between a drive and a cell and
//! `sqrt(dr² + dc²)` between two cells.
//!
//! Motion time is proportional to straight-line distance. The proportionality
//! constant is calibrated so the mean single-motion time, over uniformly
//! chosen endpoints and the four exchange motions, is `3600 / (4 · xph)`.
//!
//! A 3D cuboid rack would only change [`LibraryGrid::distance`] and the exact
//! mean computations; nothing else depends on dimensionality.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SimConfig;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("coordinate ({row}, {col}) is outside the {rows}x{cols} grid")]
    OutOfBounds { row: u32, col: u32, rows: u32, cols: u32 },
    #[error("two drives share position ({0}, {1})")]
    DuplicateDrive(u32, u32),
    #[error("{given} drive positions given for {expected} drives")]
    DriveCount { given: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridPos {
    pub row: u32,
    pub col: u32,
}

impl GridPos {
    pub fn new(row: u32, col: u32) -> Self {
        GridPos { row, col }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryGrid {
    rows: u32,
    cols: u32,
    drive_cells: Vec<GridPos>,
}

fn offset_len(dr: f64, dc: f64) -> f64 {
    (dr * dr + dc * dc).sqrt()
}

impl LibraryGrid {
    pub fn new(rows: u32, cols: u32, drive_cells: Vec<GridPos>) -> Result<Self, GeometryError> {
        let grid = LibraryGrid {
            rows,
            cols,
            drive_cells: Vec::new(),
        };
        for (i, d) in drive_cells.iter().enumerate() {
            grid.check(*d)?;
            if drive_cells[..i].contains(d) {
                return Err(GeometryError::DuplicateDrive(d.row, d.col));
            }
        }
        Ok(LibraryGrid { drive_cells, ..grid })
    }

    /// Builds the grid described by `cfg`. Without explicit drive positions the
    /// drives form a centred row-major block.
    pub fn build(cfg: &SimConfig) -> Result<Self, GeometryError> {
        let rows = cfg.vertical_dim;
        let cols = cfg.horizontal_dim();
        let drives = if cfg.drive_positions.is_empty() {
            centred_block(rows, cols, cfg.num_drives)
        } else {
            if cfg.drive_positions.len() != cfg.num_drives as usize {
                return Err(GeometryError::DriveCount {
                    given: cfg.drive_positions.len(),
                    expected: cfg.num_drives as usize,
                });
            }
            cfg.drive_positions.iter().map(|p| GridPos::new(p[0], p[1])).collect()
        };
        LibraryGrid::new(rows, cols, drives)
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn num_cells(&self) -> u64 {
        u64::from(self.rows) * u64::from(self.cols)
    }

    pub fn drive_cells(&self) -> &[GridPos] {
        &self.drive_cells
    }

    /// Home cell of a cartridge.
    pub fn cartridge_cell(&self, cartridge: u32) -> GridPos {
        GridPos::new(cartridge / self.cols, cartridge % self.cols)
    }

    /// Extent of the rack including cell width, `sqrt(rows² + cols²)`.
    pub fn diagonal(&self) -> f64 {
        offset_len(f64::from(self.rows), f64::from(self.cols))
    }

    fn check(&self, p: GridPos) -> Result<(), GeometryError> {
        if p.row < self.rows && p.col < self.cols {
            Ok(())
        } else {
            Err(GeometryError::OutOfBounds {
                row: p.row,
                col: p.col,
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    /// Euclidean distance between two grid coordinates, in cells.
    pub fn distance(&self, a: GridPos, b: GridPos) -> Result<f64, GeometryError> {
        self.check(a)?;
        self.check(b)?;
        Ok(offset_len(
            f64::from(a.row) - f64::from(b.row),
            f64::from(a.col) - f64::from(b.col),
        ))
    }

    /// Robot travel between a drive and a rack cell (crosses the aisle).
    pub fn drive_reach(&self, drive: GridPos, cell: GridPos) -> f64 {
        let dr = f64::from(drive.row) - f64::from(cell.row);
        let dc = f64::from(drive.col) - f64::from(cell.col);
        (dr * dr + dc * dc + 1.0).sqrt()
    }

    /// Visits every unordered-distance class of distinct cell pairs as
    /// `(distance, ordered pair count)`.
    fn for_each_cell_pair_class(&self, mut f: impl FnMut(f64, f64)) {
        let (rows, cols) = (i64::from(self.rows), i64::from(self.cols));
        for dr in 0..rows {
            for dc in 0..cols {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let mult = if dr > 0 { 2.0 } else { 1.0 } * if dc > 0 { 2.0 } else { 1.0 };
                let count = ((rows - dr) * (cols - dc)) as f64 * mult;
                f(offset_len(dr as f64, dc as f64), count);
            }
        }
    }

    /// Exact mean distance between two distinct uniformly chosen cells.
    /// A single-cell rack counts one unit.
    pub fn mean_cell_distance(&self) -> f64 {
        let m = self.num_cells() as f64;
        if self.num_cells() < 2 {
            return 1.0;
        }
        let mut total = 0.0;
        self.for_each_cell_pair_class(|d, count| total += d * count);
        total / (m * (m - 1.0))
    }

    /// Exact mean drive-to-cell distance, uniform over drives and cells.
    pub fn mean_drive_distance(&self) -> f64 {
        let mut total = 0.0;
        for &d in &self.drive_cells {
            for row in 0..self.rows {
                for col in 0..self.cols {
                    total += self.drive_reach(d, GridPos::new(row, col));
                }
            }
        }
        total / (self.drive_cells.len() as f64 * self.num_cells() as f64)
    }

    fn random_cell<R: Rng + ?Sized>(&self, rng: &mut R) -> GridPos {
        let idx = rng.random_range(0..self.num_cells());
        GridPos::new((idx / u64::from(self.cols)) as u32, (idx % u64::from(self.cols)) as u32)
    }
}

fn centred_block(rows: u32, cols: u32, drives: u32) -> Vec<GridPos> {
    let width = drives.min(cols).max(1);
    let height = drives.div_ceil(width);
    let top = rows.saturating_sub(height) / 2;
    let left = (cols - width) / 2;
    (0..drives)
        .map(|i| GridPos::new(top + i / width, left + i % width))
        .collect()
}

/// The four robot motions of a full exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MotionKind {
    /// Move to the drive and GET the unloaded cartridge.
    R2D,
    /// PUT that cartridge back in its home cell.
    D2C,
    /// Move to the target cartridge and GET it.
    C2C,
    /// PUT the target into the drive.
    C2D,
}

impl MotionKind {
    /// A full exchange, in order.
    pub const EXCHANGE: [MotionKind; 4] = [MotionKind::R2D, MotionKind::D2C, MotionKind::C2C, MotionKind::C2D];

    pub fn index(self) -> usize {
        self as usize
    }

    fn involves_drive(self) -> bool {
        !matches!(self, MotionKind::C2C)
    }
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MotionKind::R2D => "r2d",
            MotionKind::D2C => "d2c",
            MotionKind::C2C => "c2c",
            MotionKind::C2D => "c2d",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub probability: f64,
}

/// Distance-proportional motion-time model calibrated to a target exchange rate.
#[derive(Debug, Clone)]
pub struct MotionTimeModel {
    grid: LibraryGrid,
    time_scale: f64,
    mean_cell_distance: f64,
    mean_drive_distance: f64,
}

impl MotionTimeModel {
    pub fn calibrate(grid: LibraryGrid, robot_xph: f64) -> Self {
        let mean_cell_distance = grid.mean_cell_distance();
        let mean_drive_distance = grid.mean_drive_distance();
        let mean_unit = (3.0 * mean_drive_distance + mean_cell_distance) / 4.0;
        let target = 3600.0 / (4.0 * robot_xph);
        MotionTimeModel {
            grid,
            time_scale: target / mean_unit,
            mean_cell_distance,
            mean_drive_distance,
        }
    }

    pub fn from_config(cfg: &SimConfig) -> Result<Self, GeometryError> {
        Ok(Self::calibrate(LibraryGrid::build(cfg)?, cfg.robot_xph))
    }

    pub fn grid(&self) -> &LibraryGrid {
        &self.grid
    }

    /// Seconds per unit of travel.
    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    /// Exact expected motion time for one kind.
    pub fn mean_motion_seconds(&self, kind: MotionKind) -> f64 {
        self.time_scale
            * if kind.involves_drive() {
                self.mean_drive_distance
            } else {
                self.mean_cell_distance
            }
    }

    /// Exact expected single-motion time averaged over the exchange.
    pub fn mean_exchange_motion_seconds(&self) -> f64 {
        MotionKind::EXCHANGE
            .iter()
            .map(|k| self.mean_motion_seconds(*k))
            .sum::<f64>()
            / 4.0
    }

    /// Largest possible single motion.
    pub fn max_motion_seconds(&self) -> f64 {
        self.time_scale * self.grid.diagonal()
    }

    fn sample_distance<R: Rng + ?Sized>(&self, kind: MotionKind, rng: &mut R) -> f64 {
        if kind.involves_drive() {
            let drives = self.grid.drive_cells();
            let drive = drives[rng.random_range(0..drives.len())];
            let cell = self.grid.random_cell(rng);
            self.grid.drive_reach(drive, cell)
        } else {
            let m = self.grid.num_cells();
            if m < 2 {
                return 1.0;
            }
            let a = rng.random_range(0..m);
            let mut b = rng.random_range(0..m - 1);
            if b >= a {
                b += 1;
            }
            let cols = u64::from(self.grid.cols);
            offset_len(
                (a / cols) as f64 - (b / cols) as f64,
                (a % cols) as f64 - (b % cols) as f64,
            )
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, kind: MotionKind, rng: &mut R) -> f64 {
        self.time_scale * self.sample_distance(kind, rng)
    }

    /// Samples the four motions of one exchange, in order.
    pub fn sample_exchange<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 4] {
        MotionKind::EXCHANGE.map(|k| self.sample(k, rng))
    }

    /// Exact distance distribution of one motion kind, binned by `bin_width`
    /// travel units.
    pub fn distance_histogram(&self, kind: MotionKind, bin_width: f64) -> Vec<HistogramBin> {
        let nbins = (self.grid.diagonal() / bin_width).ceil() as usize + 1;
        let mut weights = vec![0.0; nbins];
        let mut total = 0.0;
        let mut add = |d: f64, w: f64| {
            let b = ((d / bin_width).floor() as usize).min(nbins - 1);
            weights[b] += w;
            total += w;
        };
        if kind.involves_drive() {
            for &drive in self.grid.drive_cells() {
                for row in 0..self.grid.rows {
                    for col in 0..self.grid.cols {
                        add(self.grid.drive_reach(drive, GridPos::new(row, col)), 1.0);
                    }
                }
            }
        } else if self.grid.num_cells() < 2 {
            add(1.0, 1.0);
        } else {
            self.grid.for_each_cell_pair_class(&mut add);
        }
        let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
        weights[..=last]
            .iter()
            .enumerate()
            .map(|(i, w)| HistogramBin {
                lo: i as f64 * bin_width,
                hi: (i + 1) as f64 * bin_width,
                probability: w / total,
            })
            .collect()
    }
}
