//! Color overlay of a world on a classified map.
//!
//! Colors follow roles: the map shows through as white, gray, and black;
//! the world draws its wall bands red, carved door openings green, and unit
//! interiors tinted by type. Map obstacles stay black inside interiors so
//! clutter and misfit remain visible under the overlay.

use std::path::Path;

use semloft::error::{Error, Result};
use semloft::gridmap::{save_pgm, CellState, ClassifiedGrid, OccupancyGrid};
use semloft::world::{Axis, SemanticWorld, UnitType};

use crate::png::encode_png_indexed;

/// Palette entries in role order.
pub const PALETTE: [[u8; 3]; 8] = [
    [150, 150, 150], // 0 unknown background
    [255, 255, 255], // 1 free map cell
    [20, 20, 20],    // 2 occupied map cell
    [186, 48, 48],   // 3 wall band
    [64, 176, 88],   // 4 door opening
    [129, 168, 230], // 5 room interior
    [235, 195, 100], // 6 corridor interior
    [173, 141, 219], // 7 hall interior
];

/// Grayscale twins of the palette for PGM output, chosen pairwise distinct.
pub const GRAY: [u8; 8] = [128, 255, 0, 64, 224, 200, 176, 152];

/// Rasterizes the overlay as palette indices, row-major at map dimensions.
pub fn overlay_indices(
    map_c: &ClassifiedGrid,
    world: &SemanticWorld,
    wall_thickness: u32,
) -> Result<Vec<u8>> {
    let (w, h) = (map_c.width, map_c.height);
    let raster = world.rasterize((w, h), wall_thickness)?;
    let t = wall_thickness as i32;
    let mut idx: Vec<u8> = map_c
        .cells()
        .iter()
        .map(|c| match c {
            CellState::Unknown => 0,
            CellState::Free => 1,
            CellState::Occupied => 2,
        })
        .collect();
    for (u, &ty) in world.units().iter().zip(world.types()) {
        let tint = match ty {
            UnitType::Room => 5,
            UnitType::Corridor => 6,
            UnitType::Hall => 7,
        };
        for y in (u.y0() + t).max(0)..(u.y1() - t).min(h as i32) {
            for x in (u.x0() + t).max(0)..(u.x1() - t).min(w as i32) {
                let i = y as usize * w + x as usize;
                if raster.cells()[i] == CellState::Free && map_c.cells()[i] != CellState::Occupied
                {
                    idx[i] = tint;
                }
            }
        }
    }
    for (i, &c) in raster.cells().iter().enumerate() {
        if c == CellState::Occupied {
            idx[i] = 3;
        }
    }
    for d in world.doors() {
        let (s0, s1) = d.span();
        let line = d.line();
        // The opening extrudes the segment one wall thickness to each side
        // of its lattice line, mirroring the raster's door carve.
        let (x0, y0, x1, y1) = match d.axis() {
            Axis::Vertical => (line - t, s0, line + t, s1),
            Axis::Horizontal => (s0, line - t, s1, line + t),
        };
        for y in y0.max(0)..y1.min(h as i32) {
            for x in x0.max(0)..x1.min(w as i32) {
                let i = y as usize * w + x as usize;
                if raster.cells()[i] == CellState::Free {
                    idx[i] = 4;
                }
            }
        }
    }
    Ok(idx)
}

/// Writes the overlay at `path`; the extension picks PNG or PGM.
pub fn write_overlay(
    path: &Path,
    map_c: &ClassifiedGrid,
    world: &SemanticWorld,
    wall_thickness: u32,
) -> Result<()> {
    let idx = overlay_indices(map_c, world, wall_thickness)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => {
            let bytes = encode_png_indexed(map_c.width, map_c.height, &PALETTE, &idx);
            std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
        Some("pgm") => {
            let cells = idx.iter().map(|&i| f64::from(GRAY[i as usize]) / 255.0).collect();
            let grid = OccupancyGrid::new(map_c.width, map_c.height, cells)?;
            save_pgm(&grid, path)
        }
        _ => Err(Error::Config(format!(
            "render output must end in .png or .pgm, got {:?}",
            path.display()
        ))),
    }
}
