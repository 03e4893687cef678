//! Bottom-up feature detection on classified maps: wall segments, door
//! candidates, and unit-rectangle candidates.
//!
//! Maps are axis-aligned, so walls come out of 1-D occupancy profiles: per
//! row and per column, maximal Occupied runs are merged across door-sized
//! gaps, filtered by span and support, then clustered across consecutive
//! lines into one segment per physical wall. Doors are well-supported Free
//! gaps through a wall's full thickness; unit candidates are rectangles
//! snapped to wall-pair edges and scored by the product of their supports.
//!
//! Everything here is deterministic for fixed inputs and parameters.

use crate::error::{Error, Result};
use crate::exec;
use crate::gridmap::{CellState, ClassifiedGrid};
use crate::world::{Axis, Unit};

/// Detection thresholds. Defaults are tuned so that noise-free rasterized
/// worlds round-trip: every true unit appears among the proposed rectangles.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorParams {
    /// Minimum wall span in cells.
    pub min_span: u32,
    /// Minimum fraction of Occupied cells over a wall's span.
    pub min_support: f64,
    /// Collinear runs separated by at most this many cells fuse; a
    /// door-sized gap must not split a wall.
    pub merge_gap: u32,
    /// Minimum fraction of Free cells over a door opening.
    pub gap_support_min: f64,
    /// Minimum fraction of a candidate rectangle's extent each bounding
    /// wall must cover.
    pub extent_overlap_min: f64,
    /// Unit candidates kept after scoring.
    pub top_k: usize,
    /// Expected wall band thickness; sets edge snapping and door depth.
    pub wall_thickness: u32,
    /// Inclusive door width bounds in cells.
    pub door_width: (u32, u32),
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            min_span: 8,
            min_support: 0.6,
            merge_gap: 6,
            gap_support_min: 0.6,
            extent_overlap_min: 0.7,
            top_k: 200,
            wall_thickness: 2,
            door_width: (2, 8),
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("min_support", self.min_support),
            ("gap_support_min", self.gap_support_min),
            ("extent_overlap_min", self.extent_overlap_min),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} = {v} outside (0,1]")));
            }
        }
        if self.min_span < 2 {
            return Err(Error::Config("min_span must be at least 2".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.wall_thickness == 0 {
            return Err(Error::Config("wall_thickness must be at least 1".into()));
        }
        if self.door_width.0 < 1 || self.door_width.1 < self.door_width.0 {
            return Err(Error::Config(format!(
                "door_width bounds {:?} are not an interval",
                self.door_width
            )));
        }
        Ok(())
    }
}

/// A detected straight wall: consecutive supporting lines collapsed into
/// one segment with its aggregate span and support.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WallSegment {
    pub axis: Axis,
    /// First supporting row (horizontal) or column (vertical).
    pub line_coord: i32,
    /// Number of consecutive supporting lines.
    pub thickness: u32,
    /// Half-open extent along the wall.
    pub span: (i32, i32),
    /// Fraction of scanned span cells that are Occupied.
    pub support: f64,
}

impl WallSegment {
    fn sort_key(&self) -> (u8, i32, i32) {
        let axis = match self.axis {
            Axis::Horizontal => 0,
            Axis::Vertical => 1,
        };
        (axis, self.line_coord, self.span.0)
    }
}

/// A Free opening through a wall's full thickness.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoorCandidate {
    pub axis: Axis,
    /// Endpoints on the shared boundary line behind the wall's outer band.
    pub segment: [[i32; 2]; 2],
    pub width_cells: u32,
    /// Fraction of opening cells that are Free.
    pub gap_support: f64,
}

impl DoorCandidate {
    /// Lattice line the segment lies on.
    pub fn line(&self) -> i32 {
        match self.axis {
            Axis::Vertical => self.segment[0][0],
            Axis::Horizontal => self.segment[0][1],
        }
    }

    /// Extent along the wall, ordered.
    pub fn span(&self) -> (i32, i32) {
        match self.axis {
            Axis::Vertical => (self.segment[0][1], self.segment[1][1]),
            Axis::Horizontal => (self.segment[0][0], self.segment[1][0]),
        }
    }

    fn sort_key(&self) -> (u8, i32, i32) {
        let axis = match self.axis {
            Axis::Horizontal => 0,
            Axis::Vertical => 1,
        };
        (axis, self.line(), self.span().0)
    }
}

/// A rectangle snapped to four detected walls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitCandidate {
    pub rect: Unit,
    /// Product of the four bounding wall supports, in (0,1].
    pub score: f64,
}

/// One merged run on a single row or column.
#[derive(Clone, Copy, Debug)]
struct LineRun {
    start: i32,
    end: i32,
    occupied: u32,
}

/// Occupied runs along one line, fused across gaps of at most `merge_gap`,
/// then filtered by span and support.
fn line_runs(
    cells: impl Iterator<Item = CellState>,
    min_span: u32,
    min_support: f64,
    merge_gap: u32,
) -> Vec<LineRun> {
    let mut raw: Vec<LineRun> = Vec::new();
    let mut open: Option<LineRun> = None;
    for (i, c) in cells.enumerate() {
        let i = i as i32;
        if c == CellState::Occupied {
            match open.as_mut() {
                Some(r) => {
                    r.end = i + 1;
                    r.occupied += 1;
                }
                None => open = Some(LineRun { start: i, end: i + 1, occupied: 1 }),
            }
        } else if let Some(r) = open.take() {
            raw.push(r);
        }
    }
    if let Some(r) = open {
        raw.push(r);
    }

    let mut merged: Vec<LineRun> = Vec::new();
    for r in raw {
        match merged.last_mut() {
            Some(m) if r.start - m.end <= merge_gap as i32 => {
                m.end = r.end;
                m.occupied += r.occupied;
            }
            _ => merged.push(r),
        }
    }
    merged.retain(|r| {
        let span = r.end - r.start;
        span >= min_span as i32 && f64::from(r.occupied) >= min_support * f64::from(span)
    });
    merged
}

/// A wall being grown across consecutive lines.
#[derive(Clone, Copy, Debug)]
struct Cluster {
    line_lo: i32,
    line_hi: i32,
    span: (i32, i32),
    last_span: (i32, i32),
    occupied: u64,
    scanned: u64,
}

/// End wobble allowed when stacking per-line runs into one wall. Tight on
/// purpose: a generous overlap rule would chain the offset top bands of two
/// side-by-side rooms into one misaligned cluster.
const SPAN_END_TOLERANCE: i32 = 2;

fn spans_match(a: (i32, i32), b: (i32, i32)) -> bool {
    (a.0 - b.0).abs() <= SPAN_END_TOLERANCE && (a.1 - b.1).abs() <= SPAN_END_TOLERANCE
}

fn scan_axis(map_c: &ClassifiedGrid, axis: Axis, params: &DetectorParams) -> Vec<WallSegment> {
    let (lines, _len) = match axis {
        Axis::Horizontal => (map_c.height, map_c.width),
        Axis::Vertical => (map_c.width, map_c.height),
    };
    let per_line: Vec<Vec<LineRun>> = exec::map_indexed(lines, |line| match axis {
        Axis::Horizontal => line_runs(
            (0..map_c.width).map(|x| map_c.get(x, line)),
            params.min_span,
            params.min_support,
            params.merge_gap,
        ),
        Axis::Vertical => line_runs(
            (0..map_c.height).map(|y| map_c.get(line, y)),
            params.min_span,
            params.min_support,
            params.merge_gap,
        ),
    });

    let mut done: Vec<Cluster> = Vec::new();
    let mut active: Vec<Cluster> = Vec::new();
    for (line, runs) in per_line.iter().enumerate() {
        let line = line as i32;
        let mut next: Vec<Cluster> = Vec::new();
        let mut taken = vec![false; active.len()];
        for r in runs {
            let span = (r.start, r.end);
            let slot = (0..active.len()).find(|&i| {
                !taken[i]
                    && active[i].line_hi == line - 1
                    && spans_match(active[i].last_span, span)
            });
            match slot {
                Some(i) => {
                    taken[i] = true;
                    let c = active[i];
                    next.push(Cluster {
                        line_lo: c.line_lo,
                        line_hi: line,
                        span: (c.span.0.min(span.0), c.span.1.max(span.1)),
                        last_span: span,
                        occupied: c.occupied + u64::from(r.occupied),
                        scanned: c.scanned + (span.1 - span.0) as u64,
                    });
                }
                None => next.push(Cluster {
                    line_lo: line,
                    line_hi: line,
                    span,
                    last_span: span,
                    occupied: u64::from(r.occupied),
                    scanned: (span.1 - span.0) as u64,
                }),
            }
        }
        for (i, c) in active.iter().enumerate() {
            if !taken[i] {
                done.push(*c);
            }
        }
        active = next;
    }
    done.extend(active);

    done.iter()
        .map(|c| WallSegment {
            axis,
            line_coord: c.line_lo,
            thickness: (c.line_hi - c.line_lo + 1) as u32,
            span: c.span,
            support: c.occupied as f64 / c.scanned as f64,
        })
        .collect()
}

/// Detects straight walls as merged occupancy runs, one segment per
/// physical wall, sorted by support descending.
pub fn detect_walls(map_c: &ClassifiedGrid, params: &DetectorParams) -> Vec<WallSegment> {
    let mut out = scan_axis(map_c, Axis::Horizontal, params);
    out.extend(scan_axis(map_c, Axis::Vertical, params));
    out.sort_by(|a, b| {
        b.support
            .partial_cmp(&a.support)
            .unwrap()
            .then_with(|| a.sort_key().cmp(&b.sort_key()))
    });
    out
}

/// Detects door candidates: interior gaps through a wall's full thickness
/// whose width is in bounds and whose cells are mostly Free. Sorted by gap
/// support descending.
pub fn detect_doors(
    map_c: &ClassifiedGrid,
    walls: &[WallSegment],
    params: &DetectorParams,
) -> Vec<DoorCandidate> {
    let t = params.wall_thickness as i32;
    let (w_min, w_max) = (params.door_width.0 as i32, params.door_width.1 as i32);
    let mut out: Vec<DoorCandidate> = Vec::new();
    for wall in walls {
        let lines = wall.line_coord..wall.line_coord + wall.thickness as i32;
        let cell = |pos: i32, line: i32| match wall.axis {
            Axis::Horizontal => map_c.get(pos as usize, line as usize),
            Axis::Vertical => map_c.get(line as usize, pos as usize),
        };
        // A position is open when no cell across the thickness is Occupied;
        // span ends are occupied somewhere, so runs are interior.
        let mut gap: Option<(i32, i32, u32)> = None;
        let push = |g: Option<(i32, i32, u32)>, out: &mut Vec<DoorCandidate>| {
            let Some((gs, ge, free)) = g else { return };
            let width = ge - gs;
            if width < w_min || width > w_max {
                return;
            }
            let total = (width * wall.thickness as i32) as f64;
            let gap_support = f64::from(free) / total;
            if gap_support < params.gap_support_min {
                return;
            }
            // Doors sit on the boundary line one band behind the outer
            // face, where abutting units share a wall line.
            let line = wall.line_coord + t;
            let segment = match wall.axis {
                Axis::Horizontal => [[gs, line], [ge, line]],
                Axis::Vertical => [[line, gs], [line, ge]],
            };
            out.push(DoorCandidate {
                axis: wall.axis,
                segment,
                width_cells: width as u32,
                gap_support,
            });
        };
        for pos in wall.span.0..wall.span.1 {
            let open = lines.clone().all(|l| cell(pos, l) != CellState::Occupied);
            if open {
                let free = lines.clone().filter(|&l| cell(pos, l) == CellState::Free).count();
                match gap.as_mut() {
                    Some(g) => {
                        g.1 = pos + 1;
                        g.2 += free as u32;
                    }
                    None => gap = Some((pos, pos + 1, free as u32)),
                }
            } else {
                push(gap.take(), &mut out);
            }
        }
        push(gap.take(), &mut out);
    }

    out.sort_by(|a, b| {
        b.gap_support
            .partial_cmp(&a.gap_support)
            .unwrap()
            .then_with(|| a.sort_key().cmp(&b.sort_key()))
    });
    // Parallel walls around one opening yield near-duplicates; keep the
    // best-supported of any same-axis pair on nearby lines.
    let mut kept: Vec<DoorCandidate> = Vec::new();
    for c in out {
        let dup = kept.iter().any(|k| {
            k.axis == c.axis
                && (k.line() - c.line()).abs() <= 2 * t
                && k.span().0 < c.span().1
                && c.span().0 < k.span().1
        });
        if !dup {
            kept.push(c);
        }
    }
    kept
}

fn overlap_len(a: (i32, i32), b: (i32, i32)) -> i32 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0)
}

/// Enumerates unit rectangles from horizontal and vertical wall pairs.
/// Edges snap one band deep into each cluster, so walls shared by abutting
/// units resolve to the common boundary line. Top-k by score, score being
/// the product of the four wall supports.
pub fn propose_units(walls: &[WallSegment], params: &DetectorParams) -> Vec<UnitCandidate> {
    let t = params.wall_thickness as i32;
    // A rectangle needs at least one interior cell between its bands.
    let min_side = 2 * t + 1;
    let hs: Vec<&WallSegment> = walls.iter().filter(|w| w.axis == Axis::Horizontal).collect();
    let vs: Vec<&WallSegment> = walls.iter().filter(|w| w.axis == Axis::Vertical).collect();

    // A unit's own band is one wall thickness of a cluster: the trailing
    // lines when the cluster bounds it from above or the left, the leading
    // lines from below or the right. Clusters thinner than a band (noise
    // ate a line) snap at their own extent.
    let band = |w: &WallSegment| (w.thickness as i32).min(t);

    let mut found: Vec<UnitCandidate> = Vec::new();
    for top in &hs {
        let y0 = top.line_coord + top.thickness as i32 - band(top);
        for bottom in &hs {
            let y1 = bottom.line_coord + band(bottom);
            if y1 - y0 < min_side {
                continue;
            }
            for left in &vs {
                let x0 = left.line_coord + left.thickness as i32 - band(left);
                for right in &vs {
                    let x1 = right.line_coord + band(right);
                    if x1 - x0 < min_side {
                        continue;
                    }
                    let need_x = params.extent_overlap_min * f64::from(x1 - x0);
                    let need_y = params.extent_overlap_min * f64::from(y1 - y0);
                    if f64::from(overlap_len(top.span, (x0, x1))) < need_x
                        || f64::from(overlap_len(bottom.span, (x0, x1))) < need_x
                        || f64::from(overlap_len(left.span, (y0, y1))) < need_y
                        || f64::from(overlap_len(right.span, (y0, y1))) < need_y
                    {
                        continue;
                    }
                    let rect = Unit::new(x0, y0, x1, y1).expect("sides are positive");
                    let score = top.support * bottom.support * left.support * right.support;
                    found.push(UnitCandidate { rect, score });
                }
            }
        }
    }

    // The same rectangle can arise from several wall pairs; keep its best
    // score.
    found.sort_by(|a, b| {
        a.rect
            .cmp(&b.rect)
            .then_with(|| b.score.partial_cmp(&a.score).unwrap())
    });
    found.dedup_by_key(|c| c.rect);
    found.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.rect.cmp(&b.rect))
    });
    found.truncate(params.top_k);
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{SemanticWorld, UnitType};

    fn unit(x0: i32, y0: i32, x1: i32, y1: i32) -> Unit {
        Unit::new(x0, y0, x1, y1).unwrap()
    }

    fn raster_of(units: Vec<Unit>, dims: (usize, usize)) -> ClassifiedGrid {
        let types = vec![UnitType::Room; units.len()];
        let world = SemanticWorld::from_parts(units, types, Vec::new()).unwrap();
        world.rasterize(dims, 2).unwrap()
    }

    fn segment(walls: &[WallSegment], axis: Axis, line: i32) -> &WallSegment {
        walls
            .iter()
            .find(|w| w.axis == axis && w.line_coord == line)
            .unwrap_or_else(|| panic!("no {axis:?} wall at line {line}"))
    }

    #[test]
    fn clean_unit_raster_yields_four_perimeter_walls() {
        let map = raster_of(vec![unit(0, 0, 20, 10)], (20, 10));
        let walls = detect_walls(&map, &DetectorParams::default());
        assert_eq!(walls.len(), 4);
        let top = segment(&walls, Axis::Horizontal, 0);
        assert_eq!((top.thickness, top.span, top.support), (2, (0, 20), 1.0));
        let bottom = segment(&walls, Axis::Horizontal, 8);
        assert_eq!((bottom.thickness, bottom.span), (2, (0, 20)));
        let left = segment(&walls, Axis::Vertical, 0);
        assert_eq!((left.thickness, left.span, left.support), (2, (0, 10), 1.0));
        let right = segment(&walls, Axis::Vertical, 18);
        assert_eq!((right.thickness, right.span), (2, (0, 10)));
    }

    #[test]
    fn all_free_map_has_no_walls() {
        let map = ClassifiedGrid::filled(30, 20, CellState::Free);
        assert!(detect_walls(&map, &DetectorParams::default()).is_empty());
    }

    #[test]
    fn short_or_weak_walls_are_dropped() {
        let mut map = ClassifiedGrid::filled(30, 20, CellState::Free);
        // A 6-cell scrap: below min_span.
        for x in 2..8 {
            map.set(x, 5, CellState::Occupied);
        }
        // A 20-cell line with every other cell missing: support 0.5.
        for x in (4..24).step_by(2) {
            map.set(x, 10, CellState::Occupied);
        }
        assert!(detect_walls(&map, &DetectorParams::default()).is_empty());
    }

    #[test]
    fn door_sized_gap_does_not_split_a_wall() {
        let mut map = raster_of(vec![unit(0, 0, 20, 10)], (20, 10));
        // Carve a 3-cell opening through the top band.
        for x in 8..11 {
            map.set(x, 0, CellState::Free);
            map.set(x, 1, CellState::Free);
        }
        let walls = detect_walls(&map, &DetectorParams::default());
        assert_eq!(walls.len(), 4);
        let top = segment(&walls, Axis::Horizontal, 0);
        assert_eq!(top.span, (0, 20));
        assert_eq!(top.support, 17.0 / 20.0);
    }

    #[test]
    fn wide_gaps_split_collinear_walls() {
        let mut map = ClassifiedGrid::filled(40, 8, CellState::Free);
        for x in 0..12 {
            map.set(x, 4, CellState::Occupied);
        }
        // Gap of 7 exceeds merge_gap 6.
        for x in 19..31 {
            map.set(x, 4, CellState::Occupied);
        }
        let params = DetectorParams::default();
        let walls = detect_walls(&map, &params);
        assert_eq!(walls.len(), 2);
        // Shrinking the gap to 6 fuses them.
        map.set(30, 4, CellState::Free);
        map.set(18, 4, CellState::Occupied);
        let walls = detect_walls(&map, &params);
        assert_eq!(walls.len(), 1);
        assert_eq!(walls[0].span, (0, 30));
    }

    #[test]
    fn walls_sort_by_support_descending() {
        let mut map = raster_of(vec![unit(0, 0, 20, 10)], (20, 10));
        for x in 8..11 {
            map.set(x, 8, CellState::Free);
            map.set(x, 9, CellState::Free);
        }
        let walls = detect_walls(&map, &DetectorParams::default());
        for pair in walls.windows(2) {
            assert!(pair[0].support >= pair[1].support);
        }
        assert_eq!(walls.last().unwrap().line_coord, 8);
    }

    #[test]
    fn door_gap_becomes_a_candidate_on_the_shared_line() {
        let mut map = raster_of(vec![unit(0, 0, 20, 10)], (20, 10));
        for x in 8..11 {
            map.set(x, 8, CellState::Free);
            map.set(x, 9, CellState::Free);
        }
        let params = DetectorParams::default();
        let walls = detect_walls(&map, &params);
        let doors = detect_doors(&map, &walls, &params);
        assert_eq!(doors.len(), 1);
        let d = doors[0];
        assert_eq!(d.axis, Axis::Horizontal);
        assert_eq!(d.width_cells, 3);
        assert_eq!(d.gap_support, 1.0);
        assert_eq!(d.segment, [[8, 10], [11, 10]]);
        // The candidate lies within its wall's merged span.
        let wall = segment(&walls, Axis::Horizontal, 8);
        assert!(d.span().0 >= wall.span.0 && d.span().1 <= wall.span.1);
    }

    #[test]
    fn gaps_outside_width_bounds_are_ignored() {
        let params = DetectorParams::default();
        for width in [1usize, 9] {
            let mut map = raster_of(vec![unit(0, 0, 30, 10)], (30, 10));
            for x in 10..10 + width {
                map.set(x, 0, CellState::Free);
                map.set(x, 1, CellState::Free);
            }
            let walls = detect_walls(&map, &params);
            assert!(detect_doors(&map, &walls, &params).is_empty(), "width {width}");
        }
    }

    #[test]
    fn unknown_filled_gaps_are_not_doors() {
        let mut map = raster_of(vec![unit(0, 0, 20, 10)], (20, 10));
        for x in 8..11 {
            map.set(x, 0, CellState::Unknown);
            map.set(x, 1, CellState::Unknown);
        }
        let params = DetectorParams::default();
        let walls = detect_walls(&map, &params);
        assert!(detect_doors(&map, &walls, &params).is_empty());
    }

    #[test]
    fn single_room_round_trips_as_top_candidate() {
        let map = raster_of(vec![unit(0, 0, 20, 10)], (20, 10));
        let params = DetectorParams::default();
        let walls = detect_walls(&map, &params);
        let candidates = propose_units(&walls, &params);
        assert_eq!(candidates.len(), 1);
        assert_eq!(candidates[0].rect, unit(0, 0, 20, 10));
        assert_eq!(candidates[0].score, 1.0);
    }

    #[test]
    fn abutting_rooms_propose_each_room_and_their_union() {
        let map = raster_of(vec![unit(0, 0, 20, 10), unit(20, 0, 40, 10)], (40, 10));
        let params = DetectorParams::default();
        let walls = detect_walls(&map, &params);
        let rects: Vec<Unit> = propose_units(&walls, &params).iter().map(|c| c.rect).collect();
        assert!(rects.len() >= 3);
        assert!(rects.contains(&unit(0, 0, 20, 10)));
        assert!(rects.contains(&unit(20, 0, 40, 10)));
        assert!(rects.contains(&unit(0, 0, 40, 10)));
    }

    #[test]
    fn no_vertical_walls_means_no_candidates() {
        let mut map = ClassifiedGrid::filled(30, 20, CellState::Free);
        for x in 0..30 {
            map.set(x, 2, CellState::Occupied);
            map.set(x, 12, CellState::Occupied);
        }
        let params = DetectorParams::default();
        let walls = detect_walls(&map, &params);
        assert!(walls.iter().all(|w| w.axis == Axis::Horizontal));
        assert!(propose_units(&walls, &params).is_empty());
    }

    #[test]
    fn detection_is_deterministic() {
        let mut map = raster_of(vec![unit(0, 0, 20, 10), unit(20, 0, 40, 10)], (40, 10));
        for x in 26..30 {
            map.set(x, 8, CellState::Free);
            map.set(x, 9, CellState::Free);
        }
        let params = DetectorParams::default();
        let walls = detect_walls(&map, &params);
        assert_eq!(walls, detect_walls(&map, &params));
        assert_eq!(
            detect_doors(&map, &walls, &params),
            detect_doors(&map, &walls, &params)
        );
        assert_eq!(propose_units(&walls, &params), propose_units(&walls, &params));
    }

    #[test]
    fn params_validate_rejects_out_of_range() {
        let mut p = DetectorParams::default();
        p.min_support = 0.0;
        assert!(p.validate().is_err());
        let mut p = DetectorParams::default();
        p.door_width = (5, 2);
        assert!(p.validate().is_err());
        let mut p = DetectorParams::default();
        p.top_k = 0;
        assert!(p.validate().is_err());
        assert!(DetectorParams::default().validate().is_ok());
    }
}
