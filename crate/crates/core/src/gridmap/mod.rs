//! Occupancy grid maps: loading, ternary classification, orientation
//! alignment, and synthetic map generation.
//!
//! Grids store one intensity per cell in [0, 1] with the scanner convention
//! that dark means occupied: 0.0 reads as occupied, 0.5 as unexplored, 1.0 as
//! free space.

mod pgm;

pub use pgm::{encode_pgm, load_pgm, parse_pgm, save_pgm};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec;

/// Ternary cell classification. The numeric codes are part of the scoring
/// contract: lookup tables index by them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum CellState {
    Free = 0,
    Unknown = 1,
    Occupied = 2,
}

impl CellState {
    pub const ALL: [CellState; 3] = [CellState::Free, CellState::Unknown, CellState::Occupied];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    /// Canonical intensity used when writing maps back out.
    #[inline]
    pub fn intensity(self) -> f64 {
        match self {
            CellState::Occupied => 0.0,
            CellState::Unknown => 0.5,
            CellState::Free => 1.0,
        }
    }
}

/// Raw grayscale occupancy map.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub width: usize,
    pub height: usize,
    /// Meters per cell. PGM carries no scale metadata, so this defaults to
    /// 0.05 and is only advisory.
    pub resolution: f64,
    cells: Vec<f64>,
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, cells: Vec<f64>) -> Result<Self> {
        if cells.len() != width * height {
            return Err(Error::Geometry(format!(
                "cell count {} does not match {width}x{height}",
                cells.len()
            )));
        }
        if let Some(v) = cells.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Geometry(format!("intensity {v} outside [0, 1]")));
        }
        Ok(OccupancyGrid { width, height, resolution: 0.05, cells })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.cells[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        assert!((0.0..=1.0).contains(&v), "intensity outside [0, 1]");
        self.cells[y * self.width + x] = v;
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    /// Flips polarity for maps recorded with bright-is-occupied convention.
    pub fn invert(&mut self) {
        for v in &mut self.cells {
            *v = 1.0 - *v;
        }
    }
}

/// Classified ternary map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassifiedGrid {
    pub width: usize,
    pub height: usize,
    cells: Vec<CellState>,
}

impl ClassifiedGrid {
    pub fn from_cells(width: usize, height: usize, cells: Vec<CellState>) -> Result<Self> {
        if cells.len() != width * height {
            return Err(Error::Geometry(format!(
                "cell count {} does not match {width}x{height}",
                cells.len()
            )));
        }
        Ok(ClassifiedGrid { width, height, cells })
    }

    pub fn filled(width: usize, height: usize, state: CellState) -> Self {
        ClassifiedGrid { width, height, cells: vec![state; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> CellState {
        self.cells[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, s: CellState) {
        self.cells[y * self.width + x] = s;
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub(crate) fn cells_mut(&mut self) -> &mut [CellState] {
        &mut self.cells
    }

    /// Cell totals indexed by [`CellState::index`].
    pub fn counts(&self) -> [usize; 3] {
        let mut n = [0usize; 3];
        for c in &self.cells {
            n[c.index()] += 1;
        }
        n
    }
}

/// Intensity thresholds for the ternary split. Cells at or below `h_o` are
/// occupied, cells at or below `h_u` are unknown, the rest are free.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifyThresholds {
    pub h_o: f64,
    pub h_u: f64,
}

impl Default for ClassifyThresholds {
    fn default() -> Self {
        ClassifyThresholds { h_o: 0.25, h_u: 0.75 }
    }
}

impl ClassifyThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.h_o)
            || !(0.0..=1.0).contains(&self.h_u)
            || self.h_o >= self.h_u
        {
            return Err(Error::Config(format!(
                "classification thresholds must satisfy 0 <= h_o < h_u <= 1, got {} and {}",
                self.h_o, self.h_u
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn classify_value(&self, v: f64) -> CellState {
        if v <= self.h_o {
            CellState::Occupied
        } else if v <= self.h_u {
            CellState::Unknown
        } else {
            CellState::Free
        }
    }
}

/// Classifies every cell. Row-parallel under the `parallel` feature; the
/// output is identical either way.
pub fn classify(grid: &OccupancyGrid, thresholds: &ClassifyThresholds) -> ClassifiedGrid {
    let w = grid.width;
    let rows = exec::map_indexed(grid.height, |y| {
        grid.cells[y * w..(y + 1) * w]
            .iter()
            .map(|&v| thresholds.classify_value(v))
            .collect::<Vec<_>>()
    });
    ClassifiedGrid { width: w, height: grid.height, cells: rows.concat() }
}

/// Sequential twin of [`classify`] for benches and equivalence tests.
pub fn classify_seq(grid: &OccupancyGrid, thresholds: &ClassifyThresholds) -> ClassifiedGrid {
    let w = grid.width;
    let rows = exec::map_indexed_seq(grid.height, |y| {
        grid.cells[y * w..(y + 1) * w]
            .iter()
            .map(|&v| thresholds.classify_value(v))
            .collect::<Vec<_>>()
    });
    ClassifiedGrid { width: w, height: grid.height, cells: rows.concat() }
}

const ANGLE_STEP_DEG: f64 = 0.5;
const ANGLE_MIN_DEG: f64 = -45.0;
const ANGLE_COUNT: usize = 180;

fn occupied_centers(grid: &ClassifiedGrid) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    for y in 0..grid.height {
        for x in 0..grid.width {
            if grid.get(x, y) == CellState::Occupied {
                pts.push((x as f64 + 0.5, y as f64 + 0.5));
            }
        }
    }
    pts
}

/// Axis-projection sharpness of the occupied cells after rotating them by
/// `angle_deg` about the grid center: the sum of squared histogram bin counts
/// over both axes. Sharp, axis-aligned structure scores high.
pub fn projection_sharpness(grid: &ClassifiedGrid, angle_deg: f64) -> f64 {
    let pts = occupied_centers(grid);
    sharpness_of(&pts, grid.width, grid.height, angle_deg) as f64
}

fn sharpness_of(pts: &[(f64, f64)], width: usize, height: usize, angle_deg: f64) -> u64 {
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let rad = angle_deg.to_radians();
    let (sin, cos) = rad.sin_cos();
    // Rotated coordinates stay within the grid diagonal around the center.
    let reach = (width + height) as i64 + 4;
    let off = reach;
    let mut hx = vec![0u64; (2 * reach + 1) as usize];
    let mut hy = vec![0u64; (2 * reach + 1) as usize];
    for &(x, y) in pts {
        let dx = x - cx;
        let dy = y - cy;
        let rx = cos * dx - sin * dy + cx;
        let ry = sin * dx + cos * dy + cy;
        hx[(rx.floor() as i64 + off) as usize] += 1;
        hy[(ry.floor() as i64 + off) as usize] += 1;
    }
    let sx: u64 = hx.iter().map(|&n| n * n).sum();
    let sy: u64 = hy.iter().map(|&n| n * n).sum();
    sx + sy
}

/// Finds the rotation in [-45°, 45°), at 0.5° steps, that best axis-aligns the
/// occupied structure. Applying [`rotate_grid`] with the returned angle aligns
/// the map.
pub fn dominant_orientation(grid: &ClassifiedGrid) -> Result<f64> {
    let pts = occupied_centers(grid);
    if pts.is_empty() {
        return Err(Error::Geometry("orientation undefined: no occupied cells".into()));
    }
    let scores = exec::map_indexed(ANGLE_COUNT, |i| {
        sharpness_of(&pts, grid.width, grid.height, ANGLE_MIN_DEG + ANGLE_STEP_DEG * i as f64)
    });
    let angle = |i: usize| ANGLE_MIN_DEG + ANGLE_STEP_DEG * i as f64;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        // Multi-cell-thick walls can shear across their own columns with no
        // sharpness loss, so aligned maps sit on a small plateau around zero;
        // ties resolve to the smallest rotation.
        if s > scores[best] || (s == scores[best] && angle(i).abs() < angle(best).abs()) {
            best = i;
        }
    }
    Ok(angle(best))
}

/// Rotates map content by `angle_deg` about the grid center using
/// nearest-neighbor sampling. Cells that map outside the source read as 0.5
/// (unknown). `angle_deg` must stay within (-90°, 90°).
pub fn rotate_grid(grid: &OccupancyGrid, angle_deg: f64) -> Result<OccupancyGrid> {
    if angle_deg.abs() >= 90.0 {
        return Err(Error::Geometry(format!("rotation {angle_deg} outside (-90, 90)")));
    }
    let (w, h) = (grid.width, grid.height);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    // Content moves by +angle, so each output cell samples the source at
    // -angle.
    let rad = (-angle_deg).to_radians();
    let (sin, cos) = rad.sin_cos();
    let rows = exec::map_indexed(h, |y| {
        let mut row = Vec::with_capacity(w);
        for x in 0..w {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let sx = (cos * dx - sin * dy + cx).floor();
            let sy = (sin * dx + cos * dy + cy).floor();
            let v = if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                grid.get(sx as usize, sy as usize)
            } else {
                0.5
            };
            row.push(v);
        }
        row
    });
    let mut out = OccupancyGrid::new(w, h, rows.concat())?;
    out.resolution = grid.resolution;
    Ok(out)
}

/// Class confusion noise plus clutter for synthetic maps.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    /// `flip[truth][observed]`, rows sum to 1.
    pub flip: [[f64; 3]; 3],
    /// Fraction of free cells converted into small occupied blobs.
    pub clutter_density: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn identity(seed: u64) -> Self {
        let mut flip = [[0.0; 3]; 3];
        for (i, row) in flip.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        NoiseModel { flip, clutter_density: 0.0, seed }
    }

    /// Uniform confusion: each cell keeps its class with probability
    /// `1 - flip_rate`, the remainder split evenly between the other two.
    pub fn uniform(flip_rate: f64, clutter_density: f64, seed: u64) -> Self {
        let mut flip = [[flip_rate / 2.0; 3]; 3];
        for (i, row) in flip.iter_mut().enumerate() {
            row[i] = 1.0 - flip_rate;
        }
        NoiseModel { flip, clutter_density, seed }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.flip.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Config(format!("flip row {i} has probability outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("flip row {i} sums to {sum}, expected 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.clutter_density) {
            return Err(Error::Config(format!(
                "clutter density {} outside [0, 1]",
                self.clutter_density
            )));
        }
        Ok(())
    }
}

/// Renders a world to a synthetic grayscale map: rasterize, apply the noise
/// model, then write canonical intensities. With an identity noise model the
/// result classifies back to the raster exactly.
pub fn synth_map(
    world: &crate::world::SemanticWorld,
    dims: (usize, usize),
    wall_thickness: u32,
    noise: &NoiseModel,
) -> Result<OccupancyGrid> {
    apply_noise(&world.rasterize(dims, wall_thickness)?, noise)
}

/// Renders a classified grid to canonical intensities after applying noise.
/// Deterministic for a fixed seed.
pub fn apply_noise(raster: &ClassifiedGrid, noise: &NoiseModel) -> Result<OccupancyGrid> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut states: Vec<CellState> = Vec::with_capacity(raster.cells().len());
    for &truth in raster.cells() {
        let u: f64 = rng.gen();
        let row = &noise.flip[truth.index()];
        let mut acc = 0.0;
        let mut picked = truth;
        for s in CellState::ALL {
            acc += row[s.index()];
            if u < acc {
                picked = s;
                break;
            }
        }
        states.push(picked);
    }

    if noise.clutter_density > 0.0 {
        let free_count = states.iter().filter(|s| **s == CellState::Free).count();
        let target = (noise.clutter_density * free_count as f64).round() as usize;
        let mut converted = 0usize;
        let mut attempts = 0usize;
        let max_attempts = target * 50 + 100;
        while converted < target && attempts < max_attempts {
            attempts += 1;
            let x = rng.gen_range(0..raster.width);
            let y = rng.gen_range(0..raster.height);
            let bw = rng.gen_range(1..=2usize);
            let bh = rng.gen_range(1..=2usize);
            for yy in y..(y + bh).min(raster.height) {
                for xx in x..(x + bw).min(raster.width) {
                    let i = yy * raster.width + xx;
                    if states[i] == CellState::Free {
                        states[i] = CellState::Occupied;
                        converted += 1;
                    }
                }
            }
        }
    }

    OccupancyGrid::new(
        raster.width,
        raster.height,
        states.iter().map(|s| s.intensity()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_of(values: &[f64], w: usize) -> OccupancyGrid {
        OccupancyGrid::new(w, values.len() / w, values.to_vec()).unwrap()
    }

    #[test]
    fn classify_respects_threshold_boundaries() {
        let th = ClassifyThresholds::default();
        let g = grid_of(&[0.0, 0.25, 0.26, 0.75, 0.76, 1.0], 6);
        let c = classify(&g, &th);
        assert_eq!(
            c.cells(),
            &[
                CellState::Occupied,
                CellState::Occupied,
                CellState::Unknown,
                CellState::Unknown,
                CellState::Free,
                CellState::Free,
            ]
        );
        // Every cell lands in exactly one class.
        assert_eq!(c.counts().iter().sum::<usize>(), 6);
    }

    #[test]
    fn classify_parallel_matches_sequential() {
        let mut vals = Vec::new();
        let mut state = 1u64;
        for _ in 0..97 * 53 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            vals.push((state >> 11) as f64 / (1u64 << 53) as f64);
        }
        let g = grid_of(&vals, 97);
        let th = ClassifyThresholds::default();
        assert_eq!(classify(&g, &th), classify_seq(&g, &th));
    }

    #[test]
    fn invalid_thresholds_rejected() {
        assert!(ClassifyThresholds { h_o: 0.8, h_u: 0.3 }.validate().is_err());
        assert!(ClassifyThresholds { h_o: -0.1, h_u: 0.5 }.validate().is_err());
        assert!(ClassifyThresholds::default().validate().is_ok());
    }

    #[test]
    fn rotate_zero_is_identity() {
        let g = grid_of(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], 3);
        let r = rotate_grid(&g, 0.0).unwrap();
        assert_eq!(g.cells(), r.cells());
    }

    #[test]
    fn rotate_fills_outside_with_unknown() {
        let g = grid_of(&vec![0.0; 64], 8);
        let r = rotate_grid(&g, 45.0 - 1e-9).unwrap();
        // Corners leave the source footprint under a 45 degree turn.
        assert_eq!(r.get(0, 0), 0.5);
    }

    fn frame_map(w: usize, h: usize) -> OccupancyGrid {
        let mut cells = vec![1.0; w * h];
        for x in 8..w - 8 {
            cells[8 * w + x] = 0.0;
            cells[(h - 9) * w + x] = 0.0;
        }
        for y in 8..h - 8 {
            cells[y * w + 8] = 0.0;
            cells[y * w + w - 9] = 0.0;
        }
        OccupancyGrid::new(w, h, cells).unwrap()
    }

    #[test]
    fn orientation_recovers_rotation() {
        let th = ClassifyThresholds::default();
        let base = frame_map(80, 60);
        for angle in [10.0, -7.5, 22.5] {
            let rotated = rotate_grid(&base, angle).unwrap();
            let est = dominant_orientation(&classify(&rotated, &th)).unwrap();
            assert!(
                (est + angle).abs() <= 1.0,
                "angle {angle}: estimated {est}, expected about {}",
                -angle
            );
        }
    }

    #[test]
    fn orientation_of_an_aligned_map_is_exactly_zero() {
        // Two-cell-thick walls keep full sharpness under half-degree shears,
        // so aligned maps sit on a score plateau; zero must still win it.
        let mut cells = vec![1.0; 52 * 24];
        let mut wall = |x: usize, y: usize| cells[y * 52 + x] = 0.0;
        for x in 2..50 {
            for t in 0..2 {
                wall(x, 2 + t);
                wall(x, 20 + t);
            }
        }
        for y in 2..22 {
            for t in 0..2 {
                wall(2 + t, y);
                wall(26 + t, y);
                wall(48 + t, y);
            }
        }
        let g = grid_of(&cells, 52);
        let est = dominant_orientation(&classify(&g, &ClassifyThresholds::default())).unwrap();
        assert_eq!(est, 0.0);
    }

    #[test]
    fn orientation_errors_without_occupied_cells() {
        let c = ClassifiedGrid::filled(10, 10, CellState::Free);
        let err = dominant_orientation(&c).unwrap_err();
        assert_eq!(err.kind(), "geometry");
    }

    #[test]
    fn sharpness_is_low_on_unstructured_input() {
        let th = ClassifyThresholds::default();
        let structured = classify(&frame_map(80, 60), &th);
        let mut speckle = ClassifiedGrid::filled(80, 60, CellState::Free);
        let n_structured = structured.counts()[CellState::Occupied.index()];
        // Same occupied mass, scattered pseudo-randomly.
        let mut state = 7u64;
        let mut placed = 0;
        while placed < n_structured {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let x = (state >> 33) as usize % 80;
            let y = (state >> 13) as usize % 60;
            if speckle.get(x, y) != CellState::Occupied {
                speckle.set(x, y, CellState::Occupied);
                placed += 1;
            }
        }
        let a = dominant_orientation(&structured).unwrap();
        let b = dominant_orientation(&speckle).unwrap();
        assert!(
            projection_sharpness(&structured, a) > 2.0 * projection_sharpness(&speckle, b),
            "structured sharpness should clearly dominate"
        );
    }

    #[test]
    fn identity_noise_reproduces_input_classes() {
        let mut raster = ClassifiedGrid::filled(20, 10, CellState::Free);
        raster.set(3, 3, CellState::Occupied);
        raster.set(4, 3, CellState::Unknown);
        let g = apply_noise(&raster, &NoiseModel::identity(9)).unwrap();
        let back = classify(&g, &ClassifyThresholds::default());
        assert_eq!(back, raster);
    }

    #[test]
    fn flip_rate_produces_expected_disagreement() {
        let raster = ClassifiedGrid::filled(400, 300, CellState::Free);
        let g = apply_noise(&raster, &NoiseModel::uniform(0.05, 0.0, 11)).unwrap();
        let back = classify(&g, &ClassifyThresholds::default());
        let differing = back
            .cells()
            .iter()
            .zip(raster.cells())
            .filter(|(a, b)| a != b)
            .count();
        let rate = differing as f64 / raster.cells().len() as f64;
        assert!((rate - 0.05).abs() < 0.01, "measured flip rate {rate}");
    }

    #[test]
    fn clutter_converts_requested_fraction() {
        let raster = ClassifiedGrid::filled(200, 200, CellState::Free);
        let g = apply_noise(&raster, &NoiseModel::uniform(0.0, 0.02, 5)).unwrap();
        let back = classify(&g, &ClassifyThresholds::default());
        let occupied = back.counts()[CellState::Occupied.index()];
        let frac = occupied as f64 / (200.0 * 200.0);
        assert!((frac - 0.02).abs() < 0.002, "clutter fraction {frac}");
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let mut raster = ClassifiedGrid::filled(50, 40, CellState::Free);
        for x in 10..40 {
            raster.set(x, 20, CellState::Occupied);
        }
        let n = NoiseModel::uniform(0.1, 0.05, 123);
        assert_eq!(apply_noise(&raster, &n).unwrap(), apply_noise(&raster, &n).unwrap());
        let other = NoiseModel::uniform(0.1, 0.05, 124);
        assert_ne!(apply_noise(&raster, &n).unwrap(), apply_noise(&raster, &other).unwrap());
    }

    #[test]
    fn invalid_noise_rows_rejected() {
        let mut n = NoiseModel::identity(0);
        n.flip[1][1] = 0.9;
        assert!(n.validate().is_err());
    }
}
