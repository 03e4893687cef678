//! Rasterization of a world into a classified grid.
//!
//! Painting precedence, strongest last within each region pass:
//! unknown background, then free interiors, then occupied wall bands, then
//! door openings carved back to free. Doors cut through the full double band
//! of an edge-to-edge unit pair.

use crate::error::{Error, Result};
use crate::gridmap::{CellState, ClassifiedGrid};
use crate::world::{CellRect, Door, SemanticWorld};

impl SemanticWorld {
    /// Rasterizes the whole world. Units must lie inside `dims`.
    pub fn rasterize(&self, dims: (usize, usize), wall_thickness: u32) -> Result<ClassifiedGrid> {
        let (w, h) = dims;
        if w == 0 || h == 0 {
            return Err(Error::Geometry("raster dimensions must be positive".into()));
        }
        for (i, u) in self.units().iter().enumerate() {
            if u.x0() < 0 || u.y0() < 0 || u.x1() > w as i32 || u.y1() > h as i32 {
                return Err(Error::Geometry(format!(
                    "unit {i} ({},{})-({},{}) outside raster {w}x{h}",
                    u.x0(),
                    u.y0(),
                    u.x1(),
                    u.y1()
                )));
            }
        }
        let mut grid = ClassifiedGrid::filled(w, h, CellState::Unknown);
        self.paint_region(&mut grid, CellRect::new(0, 0, w as i32, h as i32), wall_thickness);
        Ok(grid)
    }

    /// Repaints only `region` of an existing raster from this world's
    /// geometry. The sampler uses this for dirty-rectangle rescoring; painting
    /// the full region from scratch keeps it byte-equal to a fresh raster.
    pub(crate) fn paint_region(&self, grid: &mut ClassifiedGrid, region: CellRect, wall_thickness: u32) {
        let region = region.clamp_to(grid.width, grid.height);
        if region.is_empty() {
            return;
        }
        let t = wall_thickness as i32;
        let w = grid.width;
        let cells = grid.cells_mut();
        for y in region.y0..region.y1 {
            let row = y as usize * w;
            for x in region.x0..region.x1 {
                cells[row + x as usize] = CellState::Unknown;
            }
        }
        let mut fill = |r: CellRect, state: CellState| {
            let r = r.intersect(&region);
            if r.is_empty() {
                return;
            }
            for y in r.y0..r.y1 {
                let row = y as usize * w;
                for x in r.x0..r.x1 {
                    cells[row + x as usize] = state;
                }
            }
        };
        for u in self.units() {
            fill(u.interior_rect(t), CellState::Free);
        }
        for u in self.units() {
            for band in u.band_rects(t) {
                fill(band, CellState::Occupied);
            }
        }
        for d in self.doors() {
            let r = door_rect(d, t).intersect(&region);
            if r.is_empty() {
                continue;
            }
            for y in r.y0..r.y1 {
                let row = y as usize * w;
                for x in r.x0..r.x1 {
                    let c = &mut cells[row + x as usize];
                    if *c == CellState::Occupied {
                        *c = CellState::Free;
                    }
                }
            }
        }
    }
}

/// Cells a door opens: the segment's span extruded by one wall thickness to
/// each side of its lattice line, restricted to wall cells when painted.
pub(crate) fn door_rect(d: &Door, t: i32) -> CellRect {
    let (s0, s1) = d.span();
    match d.axis() {
        crate::world::Axis::Vertical => CellRect::new(d.line() - t, s0, d.line() + t, s1),
        crate::world::Axis::Horizontal => CellRect::new(s0, d.line() - t, s1, d.line() + t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Unit, UnitType, WorldParams};

    fn world_of(units: Vec<Unit>, doors: Vec<Door>) -> SemanticWorld {
        let types = vec![UnitType::Room; units.len()];
        SemanticWorld::from_parts(units, types, doors).unwrap()
    }

    #[test]
    fn single_unit_partitions_into_ring_interior_unknown() {
        let w = world_of(vec![Unit::new(1, 1, 11, 9).unwrap()], vec![]);
        let g = w.rasterize((12, 10), 1).unwrap();
        let counts = g.counts();
        assert_eq!(counts[CellState::Occupied.index()], 32); // 10x8 perimeter ring
        assert_eq!(counts[CellState::Free.index()], 48); // 8x6 interior
        assert_eq!(counts[CellState::Unknown.index()], 120 - 80);
        assert_eq!(g.get(1, 1), CellState::Occupied);
        assert_eq!(g.get(2, 2), CellState::Free);
        assert_eq!(g.get(0, 0), CellState::Unknown);
    }

    #[test]
    fn wall_band_follows_thickness() {
        let w = world_of(vec![Unit::new(0, 0, 10, 8).unwrap()], vec![]);
        let g = w.rasterize((10, 8), 2).unwrap();
        assert_eq!(g.get(1, 4), CellState::Occupied);
        assert_eq!(g.get(2, 4), CellState::Free);
        let counts = g.counts();
        assert_eq!(counts[CellState::Free.index()], 6 * 4);
        assert_eq!(counts[CellState::Occupied.index()], 80 - 24);
    }

    #[test]
    fn door_carves_through_shared_wall() {
        // Edge-to-edge pair shares a double band; the door opens all of it
        // over its span, leaving the rest of the shared wall occupied.
        let a = Unit::new(0, 0, 10, 8).unwrap();
        let b = Unit::new(10, 0, 20, 8).unwrap();
        let door = Door::new(0, 1, [[10, 2], [10, 5]]).unwrap();
        let w = world_of(vec![a, b], vec![door]);
        let g = w.rasterize((20, 8), 1).unwrap();
        let mut carved = 0;
        for y in 0..8 {
            for x in [9usize, 10] {
                if y >= 2 && y < 5 {
                    assert_eq!(g.get(x, y), CellState::Free, "door opening at ({x},{y})");
                    carved += 1;
                } else {
                    assert_eq!(g.get(x, y), CellState::Occupied, "shared wall at ({x},{y})");
                }
            }
        }
        assert_eq!(carved, 2 * 3); // both bands over the 3-cell span
    }

    #[test]
    fn door_does_not_open_unknown_cells() {
        // A door rectangle only converts wall cells; the span beyond the
        // units stays unknown.
        let a = Unit::new(0, 0, 10, 8).unwrap();
        let b = Unit::new(10, 0, 20, 8).unwrap();
        let door = Door::new(0, 1, [[10, 0], [10, 4]]).unwrap();
        let w = world_of(vec![a, b], vec![door]);
        let g = w.rasterize((22, 12), 1).unwrap();
        assert_eq!(g.get(9, 0), CellState::Free);
        assert_eq!(g.get(20, 0), CellState::Unknown);
    }

    #[test]
    fn out_of_bounds_units_rejected() {
        let w = world_of(vec![Unit::new(-1, 0, 9, 8).unwrap()], vec![]);
        assert_eq!(w.rasterize((20, 8), 1).unwrap_err().kind(), "geometry");
        let w = world_of(vec![Unit::new(0, 0, 30, 8).unwrap()], vec![]);
        assert_eq!(w.rasterize((20, 8), 1).unwrap_err().kind(), "geometry");
    }

    #[test]
    fn region_repaint_matches_full_raster() {
        let params = WorldParams::default();
        let units = vec![
            Unit::new(2, 2, 14, 12).unwrap(),
            Unit::new(14, 2, 30, 12).unwrap(),
            Unit::new(2, 12, 30, 18).unwrap(),
        ];
        let door = Door::new(0, 1, [[14, 5], [14, 9]]).unwrap();
        let (w, _) = SemanticWorld::assemble(units, vec![door], &params);
        let full = w.rasterize((32, 20), 2).unwrap();
        // Start from a stale raster and repaint a window; inside the window
        // the result must equal the fresh raster.
        let mut stale = w.rasterize((32, 20), 2).unwrap();
        for y in 4..10 {
            for x in 10..20 {
                stale.set(x, y, CellState::Unknown);
            }
        }
        w.paint_region(&mut stale, CellRect::new(10, 4, 20, 10), 2);
        assert_eq!(stale, full);
    }
}
