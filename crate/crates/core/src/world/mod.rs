//! The semantic world model: axis-aligned rectangular units with types,
//! doors on shared walls, and derived pairwise relations.
//!
//! A unit covers the half-open cell rectangle `[x0, x1) x [y0, y1)`; its wall
//! band is the outermost `wall_thickness` cells of that rectangle and the
//! rest is free interior. Two units placed edge to edge therefore share a
//! wall structure two bands thick, and doors pierce both bands.
//!
//! Units are kept in canonical order (sorted by corner coordinates) so that
//! worlds reached along different proposal paths serialize identically.

mod json;
mod raster;

pub use json::{load_world, save_world, world_from_json, world_to_json, WorldFileData};

use crate::error::{Error, Result};
use crate::exec;

/// Direction a wall or door segment runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    Vertical,
    Horizontal,
}

/// Half-open cell rectangle. May be empty.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct CellRect {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl CellRect {
    pub fn new(x0: i32, y0: i32, x1: i32, y1: i32) -> Self {
        CellRect { x0, y0, x1, y1 }
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    pub fn intersect(&self, other: &CellRect) -> CellRect {
        CellRect {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        }
    }

    /// Smallest rectangle containing both; empty inputs are ignored.
    pub fn hull(&self, other: &CellRect) -> CellRect {
        if self.is_empty() {
            return *other;
        }
        if other.is_empty() {
            return *self;
        }
        CellRect {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn expand(&self, r: i32) -> CellRect {
        CellRect { x0: self.x0 - r, y0: self.y0 - r, x1: self.x1 + r, y1: self.y1 + r }
    }

    pub fn clamp_to(&self, width: usize, height: usize) -> CellRect {
        CellRect {
            x0: self.x0.max(0),
            y0: self.y0.max(0),
            x1: self.x1.min(width as i32),
            y1: self.y1.min(height as i32),
        }
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn area(&self) -> i64 {
        if self.is_empty() {
            0
        } else {
            i64::from(self.x1 - self.x0) * i64::from(self.y1 - self.y0)
        }
    }
}

/// Which side of a unit a wall belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WallSide {
    Left,
    Right,
    Top,
    Bottom,
}

impl WallSide {
    pub const ALL: [WallSide; 4] = [WallSide::Left, WallSide::Right, WallSide::Top, WallSide::Bottom];

    pub fn axis(self) -> Axis {
        match self {
            WallSide::Left | WallSide::Right => Axis::Vertical,
            WallSide::Top | WallSide::Bottom => Axis::Horizontal,
        }
    }

    /// The side facing this one on another unit.
    pub fn opposite(self) -> WallSide {
        match self {
            WallSide::Left => WallSide::Right,
            WallSide::Right => WallSide::Left,
            WallSide::Top => WallSide::Bottom,
            WallSide::Bottom => WallSide::Top,
        }
    }

    /// Position of this side in [`Unit::walls`] and [`WallSide::ALL`].
    pub fn index(self) -> usize {
        match self {
            WallSide::Left => 0,
            WallSide::Right => 1,
            WallSide::Top => 2,
            WallSide::Bottom => 3,
        }
    }
}

/// A unit wall as a lattice segment: the supporting line coordinate and the
/// span it covers along the perpendicular axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Wall {
    pub side: WallSide,
    pub line: i32,
    pub span: (i32, i32),
}

impl Wall {
    pub fn axis(&self) -> Axis {
        self.side.axis()
    }

    pub fn length(&self) -> i32 {
        self.span.1 - self.span.0
    }
}

/// Axis-aligned rectangular unit on the cell lattice.
///
/// Stored as corners with `x0 < x1` and `y0 < y1`; the four vertices derive
/// from these in canonical order (min-x/min-y corner first, then around the
/// rectangle).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Unit {
    x0: i32,
    y0: i32,
    x1: i32,
    y1: i32,
}

impl Unit {
    pub fn new(x0: i32, y0: i32, x1: i32, y1: i32) -> Result<Unit> {
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::Geometry(format!(
                "degenerate unit corners ({x0},{y0})-({x1},{y1})"
            )));
        }
        Ok(Unit { x0, y0, x1, y1 })
    }

    /// Builds from four vertices of an axis-aligned rectangle, in any order.
    pub fn from_vertices(vs: [[i32; 2]; 4]) -> Result<Unit> {
        let x0 = vs.iter().map(|v| v[0]).min().unwrap();
        let x1 = vs.iter().map(|v| v[0]).max().unwrap();
        let y0 = vs.iter().map(|v| v[1]).min().unwrap();
        let y1 = vs.iter().map(|v| v[1]).max().unwrap();
        let unit = Unit::new(x0, y0, x1, y1)?;
        let mut want = unit.vertices().to_vec();
        let mut got = vs.to_vec();
        want.sort_unstable();
        got.sort_unstable();
        if want != got {
            return Err(Error::Geometry(format!("vertices {vs:?} do not form a rectangle")));
        }
        Ok(unit)
    }

    #[inline]
    pub fn x0(&self) -> i32 {
        self.x0
    }
    #[inline]
    pub fn y0(&self) -> i32 {
        self.y0
    }
    #[inline]
    pub fn x1(&self) -> i32 {
        self.x1
    }
    #[inline]
    pub fn y1(&self) -> i32 {
        self.y1
    }

    /// Corner lattice points: min corner first, then counter-clockwise in
    /// right-handed coordinates.
    pub fn vertices(&self) -> [[i32; 2]; 4] {
        [
            [self.x0, self.y0],
            [self.x1, self.y0],
            [self.x1, self.y1],
            [self.x0, self.y1],
        ]
    }

    pub fn width_cells(&self) -> i32 {
        self.x1 - self.x0
    }

    pub fn height_cells(&self) -> i32 {
        self.y1 - self.y0
    }

    pub fn area_cells(&self) -> i64 {
        i64::from(self.width_cells()) * i64::from(self.height_cells())
    }

    /// Long side over short side, always >= 1.
    pub fn aspect_ratio(&self) -> f64 {
        let w = f64::from(self.width_cells());
        let h = f64::from(self.height_cells());
        if w >= h {
            w / h
        } else {
            h / w
        }
    }

    pub fn walls(&self) -> [Wall; 4] {
        [
            Wall { side: WallSide::Left, line: self.x0, span: (self.y0, self.y1) },
            Wall { side: WallSide::Right, line: self.x1, span: (self.y0, self.y1) },
            Wall { side: WallSide::Top, line: self.y0, span: (self.x0, self.x1) },
            Wall { side: WallSide::Bottom, line: self.y1, span: (self.x0, self.x1) },
        ]
    }

    pub(crate) fn rect(&self) -> CellRect {
        CellRect::new(self.x0, self.y0, self.x1, self.y1)
    }

    pub(crate) fn interior_rect(&self, t: i32) -> CellRect {
        CellRect::new(self.x0 + t, self.y0 + t, self.x1 - t, self.y1 - t)
    }

    /// Wall band rectangles (outermost `t` cells), clipped to the unit.
    pub(crate) fn band_rects(&self, t: i32) -> [CellRect; 4] {
        let r = self.rect();
        [
            CellRect::new(r.x0, r.y0, (r.x0 + t).min(r.x1), r.y1),
            CellRect::new((r.x1 - t).max(r.x0), r.y0, r.x1, r.y1),
            CellRect::new(r.x0, r.y0, r.x1, (r.y0 + t).min(r.y1)),
            CellRect::new(r.x0, (r.y1 - t).max(r.y0), r.x1, r.y1),
        ]
    }

    pub fn overlap_area(&self, other: &Unit) -> i64 {
        self.rect().intersect(&other.rect()).area()
    }
}

/// Structural category of a unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnitType {
    Room,
    Corridor,
    Hall,
}

impl UnitType {
    pub const ALL: [UnitType; 3] = [UnitType::Room, UnitType::Corridor, UnitType::Hall];

    pub fn as_str(self) -> &'static str {
        match self {
            UnitType::Room => "room",
            UnitType::Corridor => "corridor",
            UnitType::Hall => "hall",
        }
    }

    pub fn from_str(s: &str) -> Option<UnitType> {
        match s {
            "room" => Some(UnitType::Room),
            "corridor" => Some(UnitType::Corridor),
            "hall" => Some(UnitType::Hall),
            _ => None,
        }
    }
}

/// Size/shape thresholds for the unit classifier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitClassThresholds {
    /// Units with at least this many cells are halls.
    pub area_big: f64,
    /// Smaller units with at least this aspect ratio are corridors.
    pub ratio_big: f64,
}

impl Default for UnitClassThresholds {
    fn default() -> Self {
        UnitClassThresholds { area_big: 3000.0, ratio_big: 3.0 }
    }
}

impl UnitClassThresholds {
    /// Adapts the hall threshold to the map: `factor` times the median
    /// candidate-unit area. Falls back to the default when no candidates
    /// exist.
    pub fn from_candidate_areas(areas: &[f64], factor: f64, ratio_big: f64) -> Self {
        if areas.is_empty() {
            return UnitClassThresholds { ratio_big, ..Default::default() };
        }
        let mut sorted = areas.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        UnitClassThresholds { area_big: factor * median, ratio_big }
    }
}

/// Rule-based unit typing: big area means hall, elongated means corridor,
/// otherwise room. Both thresholds are inclusive on the big side.
pub fn classify_unit(unit: &Unit, th: &UnitClassThresholds) -> UnitType {
    if unit.area_cells() as f64 >= th.area_big {
        UnitType::Hall
    } else if unit.aspect_ratio() >= th.ratio_big {
        UnitType::Corridor
    } else {
        UnitType::Room
    }
}

/// Pairwise spatial relation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    Adjacent,
    Irrelevant,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Adjacent => "adj",
            Relation::Irrelevant => "irr",
        }
    }

    pub fn from_str(s: &str) -> Option<Relation> {
        match s {
            "adj" => Some(Relation::Adjacent),
            "irr" => Some(Relation::Irrelevant),
            _ => None,
        }
    }
}

/// Symmetric relation matrix with an irrelevant diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationMatrix {
    n: usize,
    cells: Vec<Relation>,
}

impl RelationMatrix {
    pub fn new(n: usize) -> Self {
        RelationMatrix { n, cells: vec![Relation::Irrelevant; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> Relation {
        self.cells[p * self.n + q]
    }

    /// Sets both orientations. The diagonal stays irrelevant.
    pub fn set_pair(&mut self, p: usize, q: usize, rel: Relation) {
        if p == q {
            return;
        }
        self.cells[p * self.n + q] = rel;
        self.cells[q * self.n + p] = rel;
    }

    pub fn row_major(&self) -> &[Relation] {
        &self.cells
    }

    pub fn from_row_major(n: usize, cells: Vec<Relation>) -> Result<Self> {
        if cells.len() != n * n {
            return Err(Error::Geometry(format!(
                "relation matrix length {} does not match {n}x{n}",
                cells.len()
            )));
        }
        let m = RelationMatrix { n, cells };
        for p in 0..n {
            if m.get(p, p) != Relation::Irrelevant {
                return Err(Error::Geometry(format!("relation diagonal ({p},{p}) must be irr")));
            }
            for q in (p + 1)..n {
                if m.get(p, q) != m.get(q, p) {
                    return Err(Error::Geometry(format!("relation matrix asymmetric at ({p},{q})")));
                }
            }
        }
        Ok(m)
    }
}

/// Pairwise gate for the same-length prior, derived from relations and types.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThetaMatrix {
    n: usize,
    cells: Vec<bool>,
}

impl ThetaMatrix {
    pub fn new(n: usize) -> Self {
        ThetaMatrix { n, cells: vec![false; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> bool {
        self.cells[p * self.n + q]
    }

    pub fn set(&mut self, p: usize, q: usize, v: bool) {
        if p == q {
            return;
        }
        self.cells[p * self.n + q] = v;
    }

    /// Sets both orders of an off-diagonal pair.
    pub fn set_pair(&mut self, p: usize, q: usize, v: bool) {
        self.set(p, q, v);
        self.set(q, p, v);
    }

    pub fn row_major(&self) -> &[bool] {
        &self.cells
    }

    pub fn from_row_major(n: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != n * n {
            return Err(Error::Geometry(format!(
                "theta matrix length {} does not match {n}x{n}",
                cells.len()
            )));
        }
        let m = ThetaMatrix { n, cells };
        for p in 0..n {
            if m.get(p, p) {
                return Err(Error::Geometry(format!("theta diagonal ({p},{p}) must be false")));
            }
        }
        Ok(m)
    }
}

/// A door: an axis-aligned lattice segment on a wall line shared by two
/// units. The raster carves it through both wall bands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Door {
    pub unit_a: usize,
    pub unit_b: usize,
    pub segment: [[i32; 2]; 2],
}

impl Door {
    pub fn new(unit_a: usize, unit_b: usize, segment: [[i32; 2]; 2]) -> Result<Door> {
        let d = Door { unit_a, unit_b, segment };
        if unit_a == unit_b {
            return Err(Error::Geometry("door must connect two distinct units".into()));
        }
        if segment[0][0] != segment[1][0] && segment[0][1] != segment[1][1] {
            return Err(Error::Geometry(format!("door segment {segment:?} is not axis-aligned")));
        }
        if segment[0] == segment[1] {
            return Err(Error::Geometry("door segment is degenerate".into()));
        }
        Ok(d.canonical())
    }

    fn canonical(mut self) -> Door {
        if self.unit_a > self.unit_b {
            std::mem::swap(&mut self.unit_a, &mut self.unit_b);
        }
        if self.segment[0] > self.segment[1] {
            self.segment.swap(0, 1);
        }
        self
    }

    pub fn axis(&self) -> Axis {
        if self.segment[0][0] == self.segment[1][0] {
            Axis::Vertical
        } else {
            Axis::Horizontal
        }
    }

    /// Lattice line the segment lies on.
    pub fn line(&self) -> i32 {
        match self.axis() {
            Axis::Vertical => self.segment[0][0],
            Axis::Horizontal => self.segment[0][1],
        }
    }

    /// Extent along the wall, ordered.
    pub fn span(&self) -> (i32, i32) {
        match self.axis() {
            Axis::Vertical => (self.segment[0][1], self.segment[1][1]),
            Axis::Horizontal => (self.segment[0][0], self.segment[1][0]),
        }
    }

    pub fn width_cells(&self) -> u32 {
        let (a, b) = self.span();
        (b - a) as u32
    }

    fn sort_key(&self) -> (usize, usize, u8, i32, i32, i32) {
        let (a, b) = self.span();
        let axis = match self.axis() {
            Axis::Vertical => 0,
            Axis::Horizontal => 1,
        };
        (self.unit_a, self.unit_b, axis, self.line(), a, b)
    }

    /// True when the segment lies on a wall line of `unit` with the span
    /// contained in that wall.
    pub fn on_wall_of(&self, unit: &Unit) -> bool {
        let (s0, s1) = self.span();
        unit.walls().iter().any(|w| {
            w.axis() == self.axis() && w.line == self.line() && s0 >= w.span.0 && s1 <= w.span.1
        })
    }
}

/// Parameters that shape world derivation and validation.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldParams {
    pub class: UnitClassThresholds,
    pub relations: RelationParams,
    pub wall_thickness: u32,
    /// Inclusive door width bounds in cells.
    pub door_width: (u32, u32),
    pub min_unit_side: u32,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            class: UnitClassThresholds::default(),
            relations: RelationParams::default(),
            wall_thickness: 2,
            door_width: (2, 8),
            min_unit_side: 3,
        }
    }
}

/// Adjacency detection parameters: wall masks are dilated by
/// `dilation_radius` and a pair is adjacent when the dilated masks share at
/// least `overlap_min_cells` cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelationParams {
    pub dilation_radius: i32,
    pub overlap_min_cells: u64,
}

impl Default for RelationParams {
    fn default() -> Self {
        RelationParams { dilation_radius: 3, overlap_min_cells: 4 }
    }
}

/// The full world state. Types always parallel the units; the relation and
/// theta caches are derived and refreshed whenever geometry changes.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticWorld {
    units: Vec<Unit>,
    types: Vec<UnitType>,
    doors: Vec<Door>,
    relations: Option<RelationMatrix>,
    theta: Option<ThetaMatrix>,
}

impl SemanticWorld {
    pub fn empty() -> Self {
        SemanticWorld {
            units: Vec::new(),
            types: Vec::new(),
            doors: Vec::new(),
            relations: Some(RelationMatrix::new(0)),
            theta: Some(ThetaMatrix::new(0)),
        }
    }

    /// Builds a world from explicit parts, canonicalizing order. Types are
    /// taken as given (deserialization, tests); use [`SemanticWorld::assemble`]
    /// in pipelines that derive them.
    pub fn from_parts(units: Vec<Unit>, types: Vec<UnitType>, doors: Vec<Door>) -> Result<Self> {
        if units.len() != types.len() {
            return Err(Error::Geometry(format!(
                "{} types for {} units",
                types.len(),
                units.len()
            )));
        }
        for d in &doors {
            if d.unit_a >= units.len() || d.unit_b >= units.len() {
                return Err(Error::Geometry(format!(
                    "door references unit {} of {}",
                    d.unit_a.max(d.unit_b),
                    units.len()
                )));
            }
        }
        let mut w = SemanticWorld { units, types, doors, relations: None, theta: None };
        w.canonicalize();
        Ok(w)
    }

    /// Canonical construction used by the sampler: sorts units, derives types
    /// and relations, and drops doors invalidated by the geometry. Returns the
    /// dropped doors (callers account for them in proposal probabilities).
    pub fn assemble(units: Vec<Unit>, doors: Vec<Door>, params: &WorldParams) -> (Self, Vec<Door>) {
        let types = vec![UnitType::Room; units.len()];
        let mut w = SemanticWorld { units, types, doors, relations: None, theta: None };
        w.canonicalize();
        for (i, u) in w.units.iter().enumerate() {
            w.types[i] = classify_unit(u, &params.class);
        }
        let rel = detect_relations(&w.units, params.wall_thickness as i32, &params.relations);
        let mut kept = Vec::with_capacity(w.doors.len());
        let mut dropped = Vec::new();
        for &d in &w.doors {
            let ok = d.width_cells() >= params.door_width.0
                && d.width_cells() <= params.door_width.1
                && d.on_wall_of(&w.units[d.unit_a])
                && d.on_wall_of(&w.units[d.unit_b])
                && rel.get(d.unit_a, d.unit_b) == Relation::Adjacent
                && kept.last() != Some(&d);
            if ok {
                kept.push(d);
            } else {
                dropped.push(d);
            }
        }
        w.doors = kept;
        w.relations = Some(rel);
        (w, dropped)
    }

    fn canonicalize(&mut self) {
        let n = self.units.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| self.units[i]);
        let mut perm = vec![0usize; n];
        for (new, &old) in order.iter().enumerate() {
            perm[old] = new;
        }
        self.units = order.iter().map(|&i| self.units[i]).collect();
        self.types = order.iter().map(|&i| self.types[i]).collect();
        for d in &mut self.doors {
            *d = Door { unit_a: perm[d.unit_a], unit_b: perm[d.unit_b], segment: d.segment }
                .canonical();
        }
        self.doors.sort_by_key(|d| d.sort_key());
        self.relations = None;
        self.theta = None;
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn types(&self) -> &[UnitType] {
        &self.types
    }

    pub fn doors(&self) -> &[Door] {
        &self.doors
    }

    pub fn relations(&self) -> Option<&RelationMatrix> {
        self.relations.as_ref()
    }

    pub fn theta(&self) -> Option<&ThetaMatrix> {
        self.theta.as_ref()
    }

    /// Installs a relation matrix, for deserialized worlds and tests. Sized
    /// mismatches are rejected.
    pub fn set_relations(&mut self, rel: RelationMatrix) -> Result<()> {
        if rel.n() != self.n() {
            return Err(Error::Geometry(format!(
                "relation matrix for {} units installed in world of {}",
                rel.n(),
                self.n()
            )));
        }
        self.relations = Some(rel);
        Ok(())
    }

    pub fn set_theta(&mut self, theta: ThetaMatrix) -> Result<()> {
        if theta.n() != self.n() {
            return Err(Error::Geometry(format!(
                "theta matrix for {} units installed in world of {}",
                theta.n(),
                self.n()
            )));
        }
        self.theta = Some(theta);
        Ok(())
    }

    /// Derives the relation cache in place.
    pub fn refresh_relations(&mut self, params: &WorldParams) {
        self.relations =
            Some(detect_relations(&self.units, params.wall_thickness as i32, &params.relations));
    }

    /// Validates unit sides, door geometry, and cache shapes.
    pub fn validate(&self, params: &WorldParams) -> Result<()> {
        if self.types.len() != self.units.len() {
            return Err(Error::Geometry("types not parallel to units".into()));
        }
        for (i, u) in self.units.iter().enumerate() {
            let min = params.min_unit_side as i32;
            if u.width_cells() < min || u.height_cells() < min {
                return Err(Error::Geometry(format!(
                    "unit {i} side below minimum {min}: {}x{}",
                    u.width_cells(),
                    u.height_cells()
                )));
            }
        }
        for (i, d) in self.doors.iter().enumerate() {
            if d.unit_a >= self.n() || d.unit_b >= self.n() {
                return Err(Error::Geometry(format!("door {i} references missing unit")));
            }
            if !d.on_wall_of(&self.units[d.unit_a]) || !d.on_wall_of(&self.units[d.unit_b]) {
                return Err(Error::Geometry(format!("door {i} is not on a shared wall line")));
            }
            if d.width_cells() < params.door_width.0 || d.width_cells() > params.door_width.1 {
                return Err(Error::Geometry(format!(
                    "door {i} width {} outside [{}, {}]",
                    d.width_cells(),
                    params.door_width.0,
                    params.door_width.1
                )));
            }
        }
        if let Some(r) = &self.relations {
            if r.n() != self.n() {
                return Err(Error::Geometry("relation cache size mismatch".into()));
            }
        }
        if let Some(t) = &self.theta {
            if t.n() != self.n() {
                return Err(Error::Geometry("theta cache size mismatch".into()));
            }
        }
        Ok(())
    }

    /// Number of units whose closed rectangle (interior plus own wall band)
    /// covers each cell. Row-major.
    pub fn overlap_count_field(&self, dims: (usize, usize)) -> Vec<u16> {
        let (w, h) = dims;
        let mut field = vec![0u16; w * h];
        for u in &self.units {
            let r = u.rect().clamp_to(w, h);
            if r.is_empty() {
                continue;
            }
            for y in r.y0..r.y1 {
                let row = y as usize * w;
                for x in r.x0..r.x1 {
                    field[row + x as usize] += 1;
                }
            }
        }
        field
    }
}

/// Detects pairwise adjacency from wall proximity: each unit's four wall
/// bands are dilated by the configured radius, and a pair is adjacent when
/// the dilated masks overlap enough.
pub fn detect_relations(units: &[Unit], wall_thickness: i32, params: &RelationParams) -> RelationMatrix {
    let n = units.len();
    let mut rel = RelationMatrix::new(n);
    if n < 2 {
        return rel;
    }
    let dilated: Vec<[CellRect; 4]> = units
        .iter()
        .map(|u| u.band_rects(wall_thickness).map(|r| r.expand(params.dilation_radius)))
        .collect();
    // Upper-triangle pairs, computed in parallel and applied in order.
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|p| ((p + 1)..n).map(move |q| (p, q))).collect();
    let hits = exec::map_indexed(pairs.len(), |k| {
        let (p, q) = pairs[k];
        mask_overlap_cells(&dilated[p], &dilated[q]) >= params.overlap_min_cells
    });
    for (k, &(p, q)) in pairs.iter().enumerate() {
        if hits[k] {
            rel.set_pair(p, q, Relation::Adjacent);
        }
    }
    rel
}

/// Exact cell count of `(union of a) intersect (union of b)`, evaluated over
/// the joint bounding box.
fn mask_overlap_cells(a: &[CellRect; 4], b: &[CellRect; 4]) -> u64 {
    let bbox_a = a.iter().fold(CellRect::new(0, 0, 0, 0), |acc, r| acc.hull(r));
    let bbox_b = b.iter().fold(CellRect::new(0, 0, 0, 0), |acc, r| acc.hull(r));
    let bbox = bbox_a.intersect(&bbox_b);
    if bbox.is_empty() {
        return 0;
    }
    let mut count = 0u64;
    for y in bbox.y0..bbox.y1 {
        for x in bbox.x0..bbox.x1 {
            if a.iter().any(|r| r.contains(x, y)) && b.iter().any(|r| r.contains(x, y)) {
                count += 1;
            }
        }
    }
    count
}

/// Unit-level connectivity graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopologyGraph {
    pub n: usize,
    pub edges: Vec<TopologyEdge>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TopologyEdge {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    /// Connected through at least one door.
    Door,
    /// Adjacent without a door.
    Adjacent,
}

/// Builds the topology from the world's relation cache: one door edge per
/// door-connected pair, one adjacency edge per remaining adjacent pair.
///
/// Pairs connected by several doors still get a single door edge.
pub fn topology_graph(world: &SemanticWorld) -> Result<TopologyGraph> {
    let rel = world
        .relations()
        .ok_or_else(|| Error::Geometry("topology requires derived relations".into()))?;
    let n = world.n();
    let mut doored = vec![false; n * n];
    for d in world.doors() {
        doored[d.unit_a * n + d.unit_b] = true;
    }
    let mut edges = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if doored[a * n + b] {
                edges.push(TopologyEdge { a, b, kind: EdgeKind::Door });
            } else if rel.get(a, b) == Relation::Adjacent {
                edges.push(TopologyEdge { a, b, kind: EdgeKind::Adjacent });
            }
        }
    }
    Ok(TopologyGraph { n, edges })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(x0: i32, y0: i32, x1: i32, y1: i32) -> Unit {
        Unit::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn unit_derived_measures() {
        let u = unit(2, 3, 12, 8);
        assert_eq!(u.width_cells(), 10);
        assert_eq!(u.height_cells(), 5);
        assert_eq!(u.area_cells(), 50);
        assert!((u.aspect_ratio() - 2.0).abs() < 1e-12);
        assert_eq!(u.vertices(), [[2, 3], [12, 3], [12, 8], [2, 8]]);
    }

    #[test]
    fn degenerate_units_rejected() {
        assert!(Unit::new(5, 5, 5, 10).is_err());
        assert!(Unit::new(5, 5, 10, 5).is_err());
        assert!(Unit::from_vertices([[0, 0], [4, 0], [4, 3], [1, 3]]).is_err());
        assert_eq!(Unit::from_vertices([[4, 3], [0, 0], [4, 0], [0, 3]]).unwrap(), unit(0, 0, 4, 3));
    }

    #[test]
    fn classifier_follows_size_and_ratio() {
        let th = UnitClassThresholds { area_big: 3000.0, ratio_big: 3.0 };
        assert_eq!(classify_unit(&unit(0, 0, 10, 10), &th), UnitType::Room);
        assert_eq!(classify_unit(&unit(0, 0, 20, 6), &th), UnitType::Corridor);
        assert_eq!(classify_unit(&unit(0, 0, 100, 80), &th), UnitType::Hall);
        // Area exactly at the threshold is a hall, even when elongated.
        assert_eq!(classify_unit(&unit(0, 0, 60, 50), &th), UnitType::Hall);
        assert_eq!(classify_unit(&unit(0, 0, 300, 10), &th), UnitType::Hall);
        // Ratio exactly at the threshold is a corridor.
        assert_eq!(classify_unit(&unit(0, 0, 9, 3), &th), UnitType::Corridor);
    }

    #[test]
    fn hall_threshold_adapts_to_median_area() {
        let th = UnitClassThresholds::from_candidate_areas(&[100.0, 200.0, 300.0], 2.5, 3.0);
        assert!((th.area_big - 500.0).abs() < 1e-12);
        let th = UnitClassThresholds::from_candidate_areas(&[100.0, 200.0], 2.5, 3.0);
        assert!((th.area_big - 375.0).abs() < 1e-12);
        let th = UnitClassThresholds::from_candidate_areas(&[], 2.5, 3.0);
        assert_eq!(th.area_big, UnitClassThresholds::default().area_big);
    }

    #[test]
    fn corridor_chain_relations() {
        // Room above a corridor above a room: only the corridor touches both.
        let units = vec![unit(0, 0, 10, 10), unit(0, 10, 10, 16), unit(0, 16, 10, 26)];
        let rel = detect_relations(&units, 2, &RelationParams::default());
        assert_eq!(rel.get(0, 1), Relation::Adjacent);
        assert_eq!(rel.get(1, 2), Relation::Adjacent);
        assert_eq!(rel.get(0, 2), Relation::Irrelevant);
        for p in 0..3 {
            assert_eq!(rel.get(p, p), Relation::Irrelevant);
        }
    }

    #[test]
    fn four_unit_layout_relations() {
        // Two rooms over a corridor, one room below it. The lower room is
        // only relevant to the corridor.
        let room_a = unit(0, 0, 10, 10);
        let corridor = unit(0, 10, 20, 16);
        let room_d = unit(0, 16, 10, 26);
        let room_b = unit(10, 0, 20, 10);
        let units = vec![room_a, corridor, room_d, room_b];
        let rel = detect_relations(&units, 2, &RelationParams::default());
        let (a, c, d, b) = (0, 1, 2, 3);
        assert_eq!(rel.get(a, b), Relation::Adjacent);
        assert_eq!(rel.get(a, c), Relation::Adjacent);
        assert_eq!(rel.get(b, c), Relation::Adjacent);
        assert_eq!(rel.get(c, d), Relation::Adjacent);
        assert_eq!(rel.get(a, d), Relation::Irrelevant);
        assert_eq!(rel.get(b, d), Relation::Irrelevant);
    }

    #[test]
    fn adjacency_needs_enough_overlap() {
        // Far apart: dilated bands never meet.
        let units = vec![unit(0, 0, 10, 10), unit(30, 0, 40, 10)];
        let rel = detect_relations(&units, 2, &RelationParams::default());
        assert_eq!(rel.get(0, 1), Relation::Irrelevant);
        // Dilated bands reach 3 cells past each unit edge, so a 5-cell gap
        // still meets and a 6-cell gap does not.
        let touching = vec![unit(0, 0, 10, 10), unit(15, 0, 25, 10)];
        let rel = detect_relations(&touching, 2, &RelationParams::default());
        assert_eq!(rel.get(0, 1), Relation::Adjacent);
        let apart = vec![unit(0, 0, 10, 10), unit(16, 0, 26, 10)];
        let rel = detect_relations(&apart, 2, &RelationParams::default());
        assert_eq!(rel.get(0, 1), Relation::Irrelevant);
    }

    #[test]
    fn doors_canonicalize_and_validate() {
        let d = Door::new(3, 1, [[10, 6], [10, 2]]).unwrap();
        assert_eq!(d.unit_a, 1);
        assert_eq!(d.unit_b, 3);
        assert_eq!(d.segment, [[10, 2], [10, 6]]);
        assert_eq!(d.axis(), Axis::Vertical);
        assert_eq!(d.line(), 10);
        assert_eq!(d.span(), (2, 6));
        assert_eq!(d.width_cells(), 4);
        assert!(Door::new(1, 1, [[0, 0], [0, 3]]).is_err());
        assert!(Door::new(0, 1, [[0, 0], [3, 3]]).is_err());
        assert!(Door::new(0, 1, [[2, 2], [2, 2]]).is_err());

        let u = unit(0, 0, 10, 8);
        let on = Door::new(0, 1, [[10, 2], [10, 6]]).unwrap();
        assert!(on.on_wall_of(&u));
        let off_line = Door::new(0, 1, [[9, 2], [9, 6]]).unwrap();
        assert!(!off_line.on_wall_of(&u));
        let past_span = Door::new(0, 1, [[10, 6], [10, 9]]).unwrap();
        assert!(!past_span.on_wall_of(&u));
    }

    #[test]
    fn from_parts_canonicalizes_and_remaps_doors() {
        let right = unit(10, 0, 20, 8);
        let left = unit(0, 0, 10, 8);
        let door = Door::new(0, 1, [[10, 2], [10, 6]]).unwrap();
        // Unit 0 is the right unit before sorting.
        let w = SemanticWorld::from_parts(
            vec![right, left],
            vec![UnitType::Room, UnitType::Room],
            vec![door],
        )
        .unwrap();
        assert_eq!(w.units()[0], left);
        assert_eq!(w.units()[1], right);
        let d = w.doors()[0];
        assert!(d.on_wall_of(&w.units()[d.unit_a]));
        assert!(d.on_wall_of(&w.units()[d.unit_b]));
    }

    #[test]
    fn assemble_drops_invalid_doors() {
        let params = WorldParams::default();
        let a = unit(0, 0, 10, 8);
        let b = unit(10, 0, 20, 8);
        let good = Door::new(0, 1, [[10, 2], [10, 6]]).unwrap();
        let too_wide = Door::new(0, 1, [[10, 2], [10, 12]]).unwrap();
        let off_wall = Door::new(0, 1, [[4, 2], [4, 6]]).unwrap();
        let (w, dropped) = SemanticWorld::assemble(vec![a, b], vec![good, too_wide, off_wall], &params);
        assert_eq!(w.doors(), &[good]);
        assert_eq!(dropped.len(), 2);
        assert!(w.relations().is_some());
        assert_eq!(w.types(), &[UnitType::Room, UnitType::Room]);
    }

    #[test]
    fn validate_rejects_thin_units_and_floating_doors() {
        let params = WorldParams::default();
        let w = SemanticWorld::from_parts(vec![unit(0, 0, 2, 10)], vec![UnitType::Room], vec![])
            .unwrap();
        assert_eq!(w.validate(&params).unwrap_err().kind(), "geometry");

        let w = SemanticWorld::from_parts(
            vec![unit(0, 0, 10, 8), unit(10, 0, 20, 8)],
            vec![UnitType::Room, UnitType::Room],
            vec![Door::new(0, 1, [[5, 2], [5, 6]]).unwrap()],
        )
        .unwrap();
        assert_eq!(w.validate(&params).unwrap_err().kind(), "geometry");
    }

    #[test]
    fn overlap_field_counts_shared_cells() {
        let w = SemanticWorld::from_parts(
            vec![unit(0, 0, 5, 5), unit(3, 0, 8, 5)],
            vec![UnitType::Room, UnitType::Room],
            vec![],
        )
        .unwrap();
        let field = w.overlap_count_field((10, 6));
        let twos = field.iter().filter(|&&v| v == 2).count();
        let ones = field.iter().filter(|&&v| v == 1).count();
        assert_eq!(twos, 10); // 2 columns x 5 rows shared
        assert_eq!(ones, 25 + 25 - 2 * 10);
        assert_eq!(field[0], 1);
        assert_eq!(field[5 * 10 + 0], 0);
    }

    #[test]
    fn topology_prefers_door_edges() {
        let params = WorldParams::default();
        let units = vec![unit(0, 0, 10, 8), unit(10, 0, 20, 8), unit(20, 0, 30, 8)];
        let door = Door::new(0, 1, [[10, 2], [10, 6]]).unwrap();
        let (w, dropped) = SemanticWorld::assemble(units, vec![door], &params);
        assert!(dropped.is_empty());
        let g = topology_graph(&w).unwrap();
        assert_eq!(g.n, 3);
        assert_eq!(
            g.edges,
            vec![
                TopologyEdge { a: 0, b: 1, kind: EdgeKind::Door },
                TopologyEdge { a: 1, b: 2, kind: EdgeKind::Adjacent },
            ]
        );
    }
}
