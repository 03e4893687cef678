//! Data-driven reversible-move sampler over semantic worlds.
//!
//! Nine move kernels rewrite the world one local edit at a time: unit
//! add/remove, split/merge, wall shrink/dilate, door allocate/delete, and a
//! boundary interchange between abutting units. Every kernel declares an
//! inverse, and every move it can emit carries finite forward and reverse
//! proposal probabilities; moves whose reversal would be impossible (for
//! example removing a unit whose rectangle no detector candidate backs) are
//! excluded from the move set instead of being proposed with zero reverse
//! mass. Removing or merging away units deletes their doors as part of the
//! same move, and the reverse probability multiplies the door re-allocation
//! probabilities over the intermediate worlds in canonical order.
//!
//! Acceptance follows min(1, exp(dS/T + log q_rev - log q_fwd)) where the
//! q terms include the kernel-selection probabilities, renormalized over the
//! kernels applicable from each side. Scoring is incremental: a move only
//! repaints and retallies the dirty rectangle it touched, and the integer
//! tally makes a chain mid-run bit-identical to a from-scratch rescore.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::detectors::{self, DetectorParams, DoorCandidate, UnitCandidate};
use crate::error::{Error, Result};
use crate::exec;
use crate::gridmap::ClassifiedGrid;
use crate::scoring::{likelihood_tally, prior_log, PairMarginals, ScoringParams, Tally};
use crate::world::{
    Axis, CellRect, Door, Relation, SemanticWorld, ThetaMatrix, Unit, WallSide, WorldParams,
};

/// Deterministic generator driving every chain.
pub type ChainRng = rand_chacha::ChaCha8Rng;

/// Hard cap on exhaustive posterior enumeration.
pub const MAX_ENUM_STATES: usize = 10_000;

/// Move kernels in weight order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kernel {
    Add,
    Remove,
    Split,
    Merge,
    Shrink,
    Dilate,
    AllocateDoor,
    DeleteDoor,
    Interchange,
}

impl Kernel {
    pub const ALL: [Kernel; 9] = [
        Kernel::Add,
        Kernel::Remove,
        Kernel::Split,
        Kernel::Merge,
        Kernel::Shrink,
        Kernel::Dilate,
        Kernel::AllocateDoor,
        Kernel::DeleteDoor,
        Kernel::Interchange,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The kernel that undoes this one's moves. Interchange undoes itself.
    pub fn inverse(self) -> Kernel {
        match self {
            Kernel::Add => Kernel::Remove,
            Kernel::Remove => Kernel::Add,
            Kernel::Split => Kernel::Merge,
            Kernel::Merge => Kernel::Split,
            Kernel::Shrink => Kernel::Dilate,
            Kernel::Dilate => Kernel::Shrink,
            Kernel::AllocateDoor => Kernel::DeleteDoor,
            Kernel::DeleteDoor => Kernel::AllocateDoor,
            Kernel::Interchange => Kernel::Interchange,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Kernel::Add => "add",
            Kernel::Remove => "remove",
            Kernel::Split => "split",
            Kernel::Merge => "merge",
            Kernel::Shrink => "shrink",
            Kernel::Dilate => "dilate",
            Kernel::AllocateDoor => "allocate-door",
            Kernel::DeleteDoor => "delete-door",
            Kernel::Interchange => "interchange",
        }
    }
}

/// Geometric cooling schedule: T starts at `t0` and is multiplied by `decay`
/// after every step, never dropping below `floor`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Annealing {
    pub t0: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for Annealing {
    fn default() -> Annealing {
        Annealing { t0: 5.0, decay: 0.999, floor: 1.0 }
    }
}

/// How the chain picks its first world.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// One to three detector candidates chosen at random.
    Random,
    /// Greedy: candidates joined in score order while the posterior improves.
    Detected,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    /// Relative selection weight per kernel, indexed by [`Kernel::index`].
    pub kernel_weights: [f64; 9],
    pub max_iterations: u64,
    /// Iterations discarded before samples are recorded.
    pub burn_in: u64,
    /// Post burn-in sampling stride.
    pub record_every: u64,
    pub seed: u64,
    pub init: InitMode,
    /// None runs the chain at T = 1 throughout.
    pub annealing: Option<Annealing>,
    /// Success probability of the truncated geometric displacement draw.
    pub p_geo: f64,
    /// Largest wall displacement a single move may take, in cells.
    pub max_step: u32,
    /// Largest fraction of a new unit's area allowed to overlap the units
    /// already present.
    pub add_overlap_max: f64,
}

impl Default for ChainConfig {
    fn default() -> ChainConfig {
        ChainConfig {
            kernel_weights: [0.15, 0.15, 0.10, 0.10, 0.15, 0.15, 0.075, 0.075, 0.05],
            max_iterations: 20_000,
            burn_in: 2_000,
            record_every: 100,
            seed: 0,
            init: InitMode::Detected,
            annealing: None,
            p_geo: 0.5,
            max_step: 32,
            add_overlap_max: 0.3,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut total = 0.0;
        for (k, &w) in Kernel::ALL.iter().zip(&self.kernel_weights) {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!("weight of {} kernel is {w}", k.as_str())));
            }
            total += w;
        }
        if total <= 0.0 {
            return Err(Error::Config("kernel weights sum to zero".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.burn_in >= self.max_iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below max_iterations {}",
                self.burn_in, self.max_iterations
            )));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if !(self.p_geo > 0.0 && self.p_geo < 1.0) {
            return Err(Error::Config(format!("p_geo {} outside (0,1)", self.p_geo)));
        }
        if self.max_step == 0 {
            return Err(Error::Config("max_step must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.add_overlap_max) {
            return Err(Error::Config(format!(
                "add_overlap_max {} outside [0,1)",
                self.add_overlap_max
            )));
        }
        if let Some(a) = &self.annealing {
            if !(a.floor > 0.0 && a.t0 >= a.floor) {
                return Err(Error::Config(format!(
                    "annealing needs t0 >= floor > 0, got t0 {} floor {}",
                    a.t0, a.floor
                )));
            }
            if !(a.decay > 0.0 && a.decay <= 1.0) {
                return Err(Error::Config(format!("annealing decay {} outside (0,1]", a.decay)));
            }
        }
        Ok(())
    }
}

/// One candidate move: the rewritten world plus the kernel-local proposal
/// probabilities. Both log q values are finite for every emitted proposal;
/// irreversible edits never enter a kernel's move set. Selection terms are
/// the chain's business, not the kernel's.
#[derive(Clone, Debug)]
pub struct Proposal {
    pub kernel: Kernel,
    pub new_world: SemanticWorld,
    pub log_q_forward: f64,
    pub log_q_reverse: f64,
}

/// Per-step diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    pub iteration: u64,
    pub kernel: Kernel,
    pub accepted: bool,
    /// Acceptance probability of the proposed move, in [0,1].
    pub lambda: f64,
    /// Posterior of the world the chain holds after the step.
    pub log_posterior: f64,
}

/// Recorded post burn-in state.
#[derive(Clone, Debug)]
pub struct Sample {
    pub iteration: u64,
    pub log_posterior: f64,
    pub world: SemanticWorld,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KernelStats {
    pub proposed: u64,
    pub accepted: u64,
}

/// Outcome of a chain run. `best_score` is the maximum posterior over every
/// state the chain occupied, including the initial one.
#[derive(Clone, Debug)]
pub struct ChainTrace {
    pub samples: Vec<Sample>,
    pub best_world: SemanticWorld,
    pub best_score: f64,
    pub iterations: u64,
    pub acceptance: [KernelStats; 9],
}

/// Map-derived inputs shared by every step of a chain: detector candidates
/// gate which units and doors the kernels may create.
pub struct ProposalContext<'a> {
    pub map: &'a ClassifiedGrid,
    pub scoring: &'a ScoringParams,
    pub config: &'a ChainConfig,
    /// Unit candidates, score-sorted, all inside the map bounds.
    pub candidates: Vec<UnitCandidate>,
    pub door_candidates: Vec<DoorCandidate>,
    marginals: PairMarginals,
}

impl<'a> ProposalContext<'a> {
    pub fn new(
        map: &'a ClassifiedGrid,
        scoring: &'a ScoringParams,
        detect: &DetectorParams,
        config: &'a ChainConfig,
    ) -> Result<ProposalContext<'a>> {
        scoring.validate()?;
        detect.validate()?;
        config.validate()?;
        let walls = detectors::detect_walls(map, detect);
        let door_candidates = detectors::detect_doors(map, &walls, detect);
        let mut candidates = detectors::propose_units(&walls, detect);
        let (w, h) = (map.width as i32, map.height as i32);
        let min = scoring.world.min_unit_side as i32;
        candidates.retain(|c| {
            let r = c.rect;
            r.x0() >= 0
                && r.y0() >= 0
                && r.x1() <= w
                && r.y1() <= h
                && r.width_cells() >= min
                && r.height_cells() >= min
        });
        let marginals = PairMarginals::compute(scoring)?;
        Ok(ProposalContext { map, scoring, config, candidates, door_candidates, marginals })
    }

    fn dims(&self) -> (usize, usize) {
        (self.map.width, self.map.height)
    }

    fn theta_of(&self, world: &SemanticWorld) -> ThetaMatrix {
        let relations = world.relations().expect("assembled world carries relations");
        self.marginals.theta(world.types(), relations, self.scoring.theta_threshold)
    }
}

// ---------------------------------------------------------------------------
// Sampling helpers.

/// Index draw proportional to `weights`; caller guarantees a positive total.
fn pick_weighted(rng: &mut ChainRng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0);
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// log pmf of the geometric displacement draw truncated to 1..=cap.
fn geo_log_pmf(k: u32, cap: u32, p: f64) -> f64 {
    debug_assert!(k >= 1 && k <= cap);
    let q = 1.0 - p;
    let norm = 1.0 - q.powi(cap as i32);
    (p * q.powi(k as i32 - 1) / norm).ln()
}

fn sample_geo(rng: &mut ChainRng, cap: u32, p: f64) -> u32 {
    let q = 1.0 - p;
    let u = rng.gen::<f64>() * (1.0 - q.powi(cap as i32));
    let mut cum = 0.0;
    for k in 1..cap {
        cum += p * q.powi(k as i32 - 1);
        if u < cum {
            return k;
        }
    }
    cap
}

// ---------------------------------------------------------------------------
// Move enumeration. Every kernel samples from an explicitly enumerated move
// set, and reverse probabilities rerun the same enumerations on the new
// world, so forward and reverse masses always normalize over the same sets.

fn doors_attached(world: &SemanticWorld, i: usize) -> Vec<Door> {
    world.doors().iter().filter(|d| d.unit_a == i || d.unit_b == i).copied().collect()
}

/// Candidate indices addable to `world`, i.e. not a duplicate rectangle and
/// under the overlap budget.
fn addable_candidates(world: &SemanticWorld, ctx: &ProposalContext) -> Vec<usize> {
    let mut out = Vec::new();
    for (ci, c) in ctx.candidates.iter().enumerate() {
        if world.units().contains(&c.rect) {
            continue;
        }
        let overlap: i64 = world.units().iter().map(|u| u.overlap_area(&c.rect)).sum();
        if (overlap as f64) <= ctx.config.add_overlap_max * c.rect.area_cells() as f64 {
            out.push(ci);
        }
    }
    out
}

/// Probability that an Add proposal lands on candidate `ci`, which must be
/// addable: candidate scores, normalized over the addable set.
fn add_log_prob(world: &SemanticWorld, ctx: &ProposalContext, ci: usize) -> f64 {
    let addable = addable_candidates(world, ctx);
    let total: f64 = addable.iter().map(|&i| ctx.candidates[i].score).sum();
    debug_assert!(addable.contains(&ci));
    (ctx.candidates[ci].score / total).ln()
}

fn apply_add(world: &SemanticWorld, rect: Unit, params: &WorldParams) -> Option<SemanticWorld> {
    let mut units = world.units().to_vec();
    units.push(rect);
    let (next, dropped) = SemanticWorld::assemble(units, world.doors().to_vec(), params);
    if !dropped.is_empty() {
        debug_assert!(false, "adding a unit cannot invalidate existing doors");
        return None;
    }
    Some(next)
}

/// Removes unit `i`, deleting its doors as part of the move. Returns the new
/// world and the deleted doors in canonical order.
fn apply_remove(
    world: &SemanticWorld,
    i: usize,
    params: &WorldParams,
) -> Option<(SemanticWorld, Vec<Door>)> {
    let mut units = world.units().to_vec();
    units.remove(i);
    let deleted = doors_attached(world, i);
    let doors: Vec<Door> = world
        .doors()
        .iter()
        .filter(|d| d.unit_a != i && d.unit_b != i)
        .map(|d| {
            let remap = |u: usize| if u > i { u - 1 } else { u };
            Door { unit_a: remap(d.unit_a), unit_b: remap(d.unit_b), segment: d.segment }
        })
        .collect();
    let (next, dropped) = SemanticWorld::assemble(units, doors, params);
    if !dropped.is_empty() {
        debug_assert!(false, "removing a unit cannot invalidate other pairs' doors");
        return None;
    }
    Some((next, deleted))
}

/// All valid door allocation moves on `world`: (candidate index, unit pair).
fn alloc_moves(world: &SemanticWorld, ctx: &ProposalContext) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let Some(relations) = world.relations() else { return out };
    let (lo, hi) = ctx.scoring.world.door_width;
    for (ci, dc) in ctx.door_candidates.iter().enumerate() {
        if dc.width_cells < lo || dc.width_cells > hi {
            continue;
        }
        for i in 0..world.n() {
            for j in (i + 1)..world.n() {
                let Ok(door) = Door::new(i, j, dc.segment) else { continue };
                if door.on_wall_of(&world.units()[i])
                    && door.on_wall_of(&world.units()[j])
                    && relations.get(i, j) == Relation::Adjacent
                    && !world.doors().contains(&door)
                {
                    out.push((ci, i, j));
                }
            }
        }
    }
    out
}

/// Probability that a door-allocation proposal on `world` creates exactly
/// `door`: gap support of the matching candidate, normalized over all valid
/// allocation moves. Returns None when no candidate backs the door.
fn alloc_log_prob(world: &SemanticWorld, ctx: &ProposalContext, door: &Door) -> Option<f64> {
    let moves = alloc_moves(world, ctx);
    let total: f64 = moves.iter().map(|&(ci, _, _)| ctx.door_candidates[ci].gap_support).sum();
    let hit = moves.iter().find(|&&(ci, i, j)| {
        i == door.unit_a && j == door.unit_b && ctx.door_candidates[ci].segment == door.segment
    })?;
    Some((ctx.door_candidates[hit.0].gap_support / total).ln())
}

fn apply_alloc(
    world: &SemanticWorld,
    i: usize,
    j: usize,
    segment: [[i32; 2]; 2],
    params: &WorldParams,
) -> Option<SemanticWorld> {
    let door = Door::new(i, j, segment).ok()?;
    let mut doors = world.doors().to_vec();
    doors.push(door);
    let (next, dropped) = SemanticWorld::assemble(world.units().to_vec(), doors, params);
    if !dropped.is_empty() {
        debug_assert!(false, "allocation moves are pre-validated");
        return None;
    }
    Some(next)
}

/// Doors whose segment a detector candidate backs, so deleting them stays
/// reversible. Doors without a backing candidate are permanent.
fn deletable_doors(world: &SemanticWorld, ctx: &ProposalContext) -> Vec<usize> {
    (0..world.doors().len())
        .filter(|&di| {
            let d = &world.doors()[di];
            ctx.door_candidates.iter().any(|dc| dc.segment == d.segment)
        })
        .collect()
}

/// Units whose removal the chain can undo: the rectangle must be an addable
/// candidate once removed, and every attached door must be re-allocatable.
fn removable_units(world: &SemanticWorld, ctx: &ProposalContext) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 0..world.n() {
        let rect = world.units()[i];
        let Some(ci) = ctx.candidates.iter().position(|c| c.rect == rect) else { continue };
        let Some((without, deleted)) = apply_remove(world, i, &ctx.scoring.world) else {
            continue;
        };
        if !addable_candidates(&without, ctx).contains(&ci) {
            continue;
        }
        if reverse_composite_log_prob(&without, world, ctx, rect, &deleted).is_some() {
            out.push(i);
        }
    }
    out
}

/// Log probability of rebuilding `rect` plus its `deleted` doors on top of
/// `base`, multiplying the add and sequential allocation probabilities over
/// the intermediate worlds. The deleted doors' indices refer to `original`,
/// the world they were removed from; endpoints are re-located by rectangle.
/// None when any stage lacks a backing candidate.
fn reverse_composite_log_prob(
    base: &SemanticWorld,
    original: &SemanticWorld,
    ctx: &ProposalContext,
    rect: Unit,
    deleted: &[Door],
) -> Option<f64> {
    let ci = ctx.candidates.iter().position(|c| c.rect == rect)?;
    if !addable_candidates(base, ctx).contains(&ci) {
        return None;
    }
    let mut log_p = add_log_prob(base, ctx, ci);
    let mut cur = apply_add(base, rect, &ctx.scoring.world)?;
    for d in deleted {
        let ra = original.units()[d.unit_a];
        let rb = original.units()[d.unit_b];
        let i = find_unit(&cur, &ra)?;
        let j = find_unit(&cur, &rb)?;
        let door = Door::new(i, j, d.segment).ok()?;
        log_p += alloc_log_prob(&cur, ctx, &door)?;
        cur = apply_alloc(&cur, i, j, d.segment, &ctx.scoring.world)?;
    }
    Some(log_p)
}

fn find_unit(world: &SemanticWorld, rect: &Unit) -> Option<usize> {
    world.units().iter().position(|u| u == rect)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct SplitMove {
    unit: usize,
    axis: Axis,
    cut: i32,
}

/// Valid cuts of `unit` along `axis`: both parts keep the minimum side and
/// no attached door straddles the cut line.
fn split_cuts(world: &SemanticWorld, unit: usize, axis: Axis, min_side: i32) -> Vec<i32> {
    let u = &world.units()[unit];
    let (lo, hi) = match axis {
        Axis::Vertical => (u.x0(), u.x1()),
        Axis::Horizontal => (u.y0(), u.y1()),
    };
    let doors = doors_attached(world, unit);
    let mut out = Vec::new();
    for cut in (lo + min_side)..=(hi - min_side) {
        let ok = doors.iter().all(|d| {
            if d.axis() == axis {
                // Runs along a side wall; both parts keep that wall intact.
                true
            } else {
                let (s0, s1) = d.span();
                s1 <= cut || s0 >= cut
            }
        });
        if ok {
            out.push(cut);
        }
    }
    out
}

fn split_moves(world: &SemanticWorld, ctx: &ProposalContext) -> Vec<SplitMove> {
    let min = ctx.scoring.world.min_unit_side as i32;
    let mut out = Vec::new();
    for unit in 0..world.n() {
        for axis in [Axis::Vertical, Axis::Horizontal] {
            for cut in split_cuts(world, unit, axis, min) {
                out.push(SplitMove { unit, axis, cut });
            }
        }
    }
    out
}

/// Hierarchical probability of one split move: uniform over units that can
/// split at all, axes with a valid cut, then cut positions.
fn split_log_prob(world: &SemanticWorld, ctx: &ProposalContext, mv: SplitMove) -> f64 {
    let min = ctx.scoring.world.min_unit_side as i32;
    let units_with: Vec<usize> = (0..world.n())
        .filter(|&i| {
            [Axis::Vertical, Axis::Horizontal]
                .iter()
                .any(|&a| !split_cuts(world, i, a, min).is_empty())
        })
        .collect();
    let axes = [Axis::Vertical, Axis::Horizontal]
        .iter()
        .filter(|&&a| !split_cuts(world, mv.unit, a, min).is_empty())
        .count();
    let cuts = split_cuts(world, mv.unit, mv.axis, min).len();
    debug_assert!(units_with.contains(&mv.unit) && axes > 0 && cuts > 0);
    -((units_with.len() * axes * cuts) as f64).ln()
}

/// Splits a unit in two at `cut`, handing each attached door to the part
/// whose wall still carries it.
fn apply_split(
    world: &SemanticWorld,
    mv: SplitMove,
    params: &WorldParams,
) -> Option<SemanticWorld> {
    let u = world.units()[mv.unit];
    let (a, b) = match mv.axis {
        Axis::Vertical => (
            Unit::new(u.x0(), u.y0(), mv.cut, u.y1()).ok()?,
            Unit::new(mv.cut, u.y0(), u.x1(), u.y1()).ok()?,
        ),
        Axis::Horizontal => (
            Unit::new(u.x0(), u.y0(), u.x1(), mv.cut).ok()?,
            Unit::new(u.x0(), mv.cut, u.x1(), u.y1()).ok()?,
        ),
    };
    let mut units = world.units().to_vec();
    units[mv.unit] = a;
    units.push(b);
    let b_idx = units.len() - 1;
    let (low_line, high_line) = match mv.axis {
        Axis::Vertical => (u.x0(), u.x1()),
        Axis::Horizontal => (u.y0(), u.y1()),
    };
    let mut doors = Vec::with_capacity(world.doors().len());
    for d in world.doors() {
        if d.unit_a != mv.unit && d.unit_b != mv.unit {
            doors.push(*d);
            continue;
        }
        let owner = if d.axis() == mv.axis {
            if d.line() == low_line {
                mv.unit
            } else if d.line() == high_line {
                b_idx
            } else {
                return None;
            }
        } else {
            let (s0, s1) = d.span();
            if s1 <= mv.cut {
                mv.unit
            } else if s0 >= mv.cut {
                b_idx
            } else {
                return None;
            }
        };
        let other = if d.unit_a == mv.unit { d.unit_b } else { d.unit_a };
        doors.push(Door::new(owner, other, d.segment).ok()?);
    }
    let (next, dropped) = SemanticWorld::assemble(units, doors, params);
    if !dropped.is_empty() {
        debug_assert!(false, "split cuts are pre-validated against attached doors");
        return None;
    }
    Some(next)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct MergeMove {
    a: usize,
    b: usize,
    axis: Axis,
    /// Shared boundary line, which the inverse split restores.
    cut: i32,
}

/// Pairs that abut edge-to-edge with equal cross extents, whose shared-line
/// doors (deleted by the merge) can all be re-allocated afterwards.
fn merge_moves(world: &SemanticWorld, ctx: &ProposalContext) -> Vec<MergeMove> {
    let mut out = Vec::new();
    for a in 0..world.n() {
        for b in (a + 1)..world.n() {
            let (ua, ub) = (world.units()[a], world.units()[b]);
            let mv = if ua.y0() == ub.y0() && ua.y1() == ub.y1() && ua.x1() == ub.x0() {
                Some(MergeMove { a, b, axis: Axis::Vertical, cut: ua.x1() })
            } else if ua.y0() == ub.y0() && ua.y1() == ub.y1() && ub.x1() == ua.x0() {
                Some(MergeMove { a, b, axis: Axis::Vertical, cut: ub.x1() })
            } else if ua.x0() == ub.x0() && ua.x1() == ub.x1() && ua.y1() == ub.y0() {
                Some(MergeMove { a, b, axis: Axis::Horizontal, cut: ua.y1() })
            } else if ua.x0() == ub.x0() && ua.x1() == ub.x1() && ub.y1() == ua.y0() {
                Some(MergeMove { a, b, axis: Axis::Horizontal, cut: ub.y1() })
            } else {
                None
            };
            let Some(mv) = mv else { continue };
            if merge_reverse_log_prob(world, ctx, mv).is_some() {
                out.push(mv);
            }
        }
    }
    out
}

/// Merges a pair into their hull, deleting the shared-line doors as part of
/// the move. Returns the new world and the deleted doors in canonical order.
fn apply_merge(
    world: &SemanticWorld,
    mv: MergeMove,
    params: &WorldParams,
) -> Option<(SemanticWorld, Vec<Door>)> {
    let (ua, ub) = (world.units()[mv.a], world.units()[mv.b]);
    let merged = Unit::new(
        ua.x0().min(ub.x0()),
        ua.y0().min(ub.y0()),
        ua.x1().max(ub.x1()),
        ua.y1().max(ub.y1()),
    )
    .ok()?;
    let mut deleted = Vec::new();
    let mut units = Vec::with_capacity(world.n() - 1);
    let mut remap = vec![0usize; world.n()];
    for (i, u) in world.units().iter().enumerate() {
        if i == mv.a || i == mv.b {
            continue;
        }
        remap[i] = units.len();
        units.push(*u);
    }
    let merged_idx = units.len();
    remap[mv.a] = merged_idx;
    remap[mv.b] = merged_idx;
    units.push(merged);
    let mut doors = Vec::with_capacity(world.doors().len());
    for d in world.doors() {
        let joins_pair = (d.unit_a == mv.a && d.unit_b == mv.b)
            || (d.unit_a == mv.b && d.unit_b == mv.a);
        if joins_pair {
            deleted.push(*d);
        } else {
            doors.push(Door::new(remap[d.unit_a], remap[d.unit_b], d.segment).ok()?);
        }
    }
    let (next, dropped) = SemanticWorld::assemble(units, doors, params);
    if !dropped.is_empty() {
        debug_assert!(false, "merge keeps every outer wall of the pair");
        return None;
    }
    Some((next, deleted))
}

/// Reverse probability of a merge: split the hull at the old boundary, then
/// re-allocate the deleted doors over the intermediate worlds.
fn merge_reverse_log_prob(
    world: &SemanticWorld,
    ctx: &ProposalContext,
    mv: MergeMove,
) -> Option<f64> {
    let (merged_world, deleted) = apply_merge(world, mv, &ctx.scoring.world)?;
    let (ua, ub) = (world.units()[mv.a], world.units()[mv.b]);
    let hull = Unit::new(
        ua.x0().min(ub.x0()),
        ua.y0().min(ub.y0()),
        ua.x1().max(ub.x1()),
        ua.y1().max(ub.y1()),
    )
    .ok()?;
    let unit = find_unit(&merged_world, &hull)?;
    let smv = SplitMove { unit, axis: mv.axis, cut: mv.cut };
    let min = ctx.scoring.world.min_unit_side as i32;
    if !split_cuts(&merged_world, unit, mv.axis, min).contains(&mv.cut) {
        return None;
    }
    let mut log_p = split_log_prob(&merged_world, ctx, smv);
    let mut cur = apply_split(&merged_world, smv, &ctx.scoring.world)?;
    for d in &deleted {
        let ra = world.units()[d.unit_a];
        let rb = world.units()[d.unit_b];
        let i = find_unit(&cur, &ra)?;
        let j = find_unit(&cur, &rb)?;
        let door = Door::new(i, j, d.segment).ok()?;
        log_p += alloc_log_prob(&cur, ctx, &door)?;
        cur = apply_alloc(&cur, i, j, d.segment, &ctx.scoring.world)?;
    }
    Some(log_p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ResizeMove {
    unit: usize,
    side: WallSide,
    /// Largest valid displacement for this unit and side.
    cap: u32,
}

/// Valid wall displacements for shrinking (`grow == false`) or dilating
/// (`grow == true`) each unit. A side with a door on it cannot move at all;
/// shrinking is further limited by the minimum side and by door spans on the
/// perpendicular walls; dilating by the map bounds.
fn resize_moves(
    world: &SemanticWorld,
    ctx: &ProposalContext,
    grow: bool,
) -> Vec<ResizeMove> {
    let min = ctx.scoring.world.min_unit_side as i32;
    let (w, h) = ctx.dims();
    let (w, h) = (w as i32, h as i32);
    let mut out = Vec::new();
    for unit in 0..world.n() {
        let u = world.units()[unit];
        let doors = doors_attached(world, unit);
        for wall in u.walls() {
            let mut cap = if grow {
                match wall.side {
                    WallSide::Left => u.x0(),
                    WallSide::Right => w - u.x1(),
                    WallSide::Top => u.y0(),
                    WallSide::Bottom => h - u.y1(),
                }
            } else {
                match wall.side {
                    WallSide::Left | WallSide::Right => u.width_cells() - min,
                    WallSide::Top | WallSide::Bottom => u.height_cells() - min,
                }
            };
            for d in &doors {
                if d.axis() == wall.axis() && d.line() == wall.line {
                    cap = 0;
                } else if !grow && d.axis() != wall.axis() {
                    let (s0, s1) = d.span();
                    cap = cap.min(match wall.side {
                        WallSide::Left => s0 - u.x0(),
                        WallSide::Right => u.x1() - s1,
                        WallSide::Top => s0 - u.y0(),
                        WallSide::Bottom => u.y1() - s1,
                    });
                }
            }
            let cap = cap.min(ctx.config.max_step as i32);
            if cap >= 1 {
                out.push(ResizeMove { unit, side: wall.side, cap: cap as u32 });
            }
        }
    }
    out
}

/// Hierarchical probability of moving `side` of `unit` by `k` cells:
/// uniform over units with a movable wall, then over that unit's movable
/// walls, then the truncated geometric displacement.
fn resize_log_prob(moves: &[ResizeMove], unit: usize, side: WallSide, k: u32, p: f64) -> f64 {
    let units: Vec<usize> = {
        let mut v: Vec<usize> = moves.iter().map(|m| m.unit).collect();
        v.dedup();
        v
    };
    let sides: Vec<&ResizeMove> = moves.iter().filter(|m| m.unit == unit).collect();
    let mv = sides.iter().find(|m| m.side == side).expect("move taken from this set");
    -(units.len() as f64).ln() - (sides.len() as f64).ln() + geo_log_pmf(k, mv.cap, p)
}

fn apply_resize(
    world: &SemanticWorld,
    unit: usize,
    side: WallSide,
    k: i32,
    grow: bool,
    params: &WorldParams,
) -> Option<SemanticWorld> {
    let u = world.units()[unit];
    let d = if grow { k } else { -k };
    let rect = match side {
        WallSide::Left => Unit::new(u.x0() - d, u.y0(), u.x1(), u.y1()),
        WallSide::Right => Unit::new(u.x0(), u.y0(), u.x1() + d, u.y1()),
        WallSide::Top => Unit::new(u.x0(), u.y0() - d, u.x1(), u.y1()),
        WallSide::Bottom => Unit::new(u.x0(), u.y0(), u.x1(), u.y1() + d),
    }
    .ok()?;
    let mut units = world.units().to_vec();
    units[unit] = rect;
    let (next, dropped) = SemanticWorld::assemble(units, world.doors().to_vec(), params);
    if !dropped.is_empty() {
        // Unreachable in practice: displacement caps keep every attached
        // door on its wall, and adjacency at a surviving door's span holds
        // whenever the dilation radius covers the door width.
        return None;
    }
    Some(next)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct InterchangeMove {
    /// Lower-coordinate unit of the abutting pair.
    low: usize,
    high: usize,
    axis: Axis,
    /// Shared boundary line before the move.
    line: i32,
    /// +1 pushes the boundary toward `high`, -1 toward `low`.
    dir: i32,
    cap: u32,
}

/// Boundary-shift moves between pairs that abut with equal cross extents.
/// The shift grows one unit and shrinks the other by the same area. Doors on
/// the shared line pin it in place; doors on the shrinking side's
/// perpendicular walls cap the displacement.
fn interchange_moves(world: &SemanticWorld, ctx: &ProposalContext) -> Vec<InterchangeMove> {
    let min = ctx.scoring.world.min_unit_side as i32;
    let mut out = Vec::new();
    for a in 0..world.n() {
        for b in (a + 1)..world.n() {
            let (ua, ub) = (world.units()[a], world.units()[b]);
            let pair = if ua.y0() == ub.y0() && ua.y1() == ub.y1() && ua.x1() == ub.x0() {
                Some((a, b, Axis::Vertical, ua.x1()))
            } else if ua.y0() == ub.y0() && ua.y1() == ub.y1() && ub.x1() == ua.x0() {
                Some((b, a, Axis::Vertical, ub.x1()))
            } else if ua.x0() == ub.x0() && ua.x1() == ub.x1() && ua.y1() == ub.y0() {
                Some((a, b, Axis::Horizontal, ua.y1()))
            } else if ua.x0() == ub.x0() && ua.x1() == ub.x1() && ub.y1() == ua.y0() {
                Some((b, a, Axis::Horizontal, ub.y1()))
            } else {
                None
            };
            let Some((low, high, axis, line)) = pair else { continue };
            let pinned = [low, high].iter().any(|&i| {
                doors_attached(world, i)
                    .iter()
                    .any(|d| d.axis() == axis && d.line() == line)
            });
            if pinned {
                continue;
            }
            for dir in [1i32, -1] {
                // The unit losing cells caps the displacement.
                let shrinking = if dir == 1 { high } else { low };
                let su = world.units()[shrinking];
                let mut cap = match axis {
                    Axis::Vertical => su.width_cells() - min,
                    Axis::Horizontal => su.height_cells() - min,
                };
                for d in doors_attached(world, shrinking) {
                    if d.axis() != axis {
                        let (s0, s1) = d.span();
                        cap = cap.min(if dir == 1 { s0 - line } else { line - s1 });
                    }
                }
                let cap = cap.min(ctx.config.max_step as i32);
                if cap >= 1 {
                    out.push(InterchangeMove { low, high, axis, line, dir, cap: cap as u32 });
                }
            }
        }
    }
    out
}

fn interchange_log_prob(moves: &[InterchangeMove], mv: &InterchangeMove, k: u32, p: f64) -> f64 {
    let pairs: Vec<(usize, usize)> = {
        let mut v: Vec<(usize, usize)> = moves.iter().map(|m| (m.low, m.high)).collect();
        v.dedup();
        v
    };
    let dirs = moves.iter().filter(|m| (m.low, m.high) == (mv.low, mv.high)).count();
    -(pairs.len() as f64).ln() - (dirs as f64).ln() + geo_log_pmf(k, mv.cap, p)
}

fn apply_interchange(
    world: &SemanticWorld,
    mv: &InterchangeMove,
    k: i32,
    params: &WorldParams,
) -> Option<SemanticWorld> {
    let shift = mv.dir * k;
    let (lu, hu) = (world.units()[mv.low], world.units()[mv.high]);
    let (nl, nh) = match mv.axis {
        Axis::Vertical => (
            Unit::new(lu.x0(), lu.y0(), mv.line + shift, lu.y1()).ok()?,
            Unit::new(mv.line + shift, hu.y0(), hu.x1(), hu.y1()).ok()?,
        ),
        Axis::Horizontal => (
            Unit::new(lu.x0(), lu.y0(), lu.x1(), mv.line + shift).ok()?,
            Unit::new(hu.x0(), mv.line + shift, hu.x1(), hu.y1()).ok()?,
        ),
    };
    let mut units = world.units().to_vec();
    units[mv.low] = nl;
    units[mv.high] = nh;
    let (next, dropped) = SemanticWorld::assemble(units, world.doors().to_vec(), params);
    if !dropped.is_empty() {
        // Same reasoning as apply_resize: caps keep doors valid.
        return None;
    }
    Some(next)
}

// ---------------------------------------------------------------------------
// Kernels. Each samples one move from its enumerated set and reports
// kernel-local forward and reverse probabilities; None means the kernel has
// no move from this world.

pub fn kernel_add(
    world: &SemanticWorld,
    ctx: &ProposalContext,
    rng: &mut ChainRng,
) -> Option<Proposal> {
    let addable = addable_candidates(world, ctx);
    if addable.is_empty() {
        return None;
    }
    let weights: Vec<f64> = addable.iter().map(|&ci| ctx.candidates[ci].score).collect();
    let ci = addable[pick_weighted(rng, &weights)];
    let rect = ctx.candidates[ci].rect;
    let new_world = apply_add(world, rect, &ctx.scoring.world)?;
    let log_q_forward = add_log_prob(world, ctx, ci);
    let removable = removable_units(&new_world, ctx);
    debug_assert!(!removable.is_empty());
    let log_q_reverse = -(removable.len() as f64).ln();
    Some(Proposal { kernel: Kernel::Add, new_world, log_q_forward, log_q_reverse })
}

pub fn kernel_remove(
    world: &SemanticWorld,
    ctx: &ProposalContext,
    rng: &mut ChainRng,
) -> Option<Proposal> {
    let removable = removable_units(world, ctx);
    if removable.is_empty() {
        return None;
    }
    let i = removable[rng.gen_range(0..removable.len())];
    let rect = world.units()[i];
    let (new_world, deleted) = apply_remove(world, i, &ctx.scoring.world)?;
    let log_q_forward = -(removable.len() as f64).ln();
    let log_q_reverse = reverse_composite_log_prob(&new_world, world, ctx, rect, &deleted)?;
    Some(Proposal { kernel: Kernel::Remove, new_world, log_q_forward, log_q_reverse })
}

pub fn kernel_split(
    world: &SemanticWorld,
    ctx: &ProposalContext,
    rng: &mut ChainRng,
) -> Option<Proposal> {
    let moves = split_moves(world, ctx);
    if moves.is_empty() {
        return None;
    }
    // Hierarchical draw: unit, axis, cut.
    let mut units: Vec<usize> = moves.iter().map(|m| m.unit).collect();
    units.dedup();
    let unit = units[rng.gen_range(0..units.len())];
    let mut axes: Vec<Axis> = moves.iter().filter(|m| m.unit == unit).map(|m| m.axis).collect();
    axes.dedup();
    let axis = axes[rng.gen_range(0..axes.len())];
    let cuts: Vec<i32> = moves
        .iter()
        .filter(|m| m.unit == unit && m.axis == axis)
        .map(|m| m.cut)
        .collect();
    let cut = cuts[rng.gen_range(0..cuts.len())];
    let mv = SplitMove { unit, axis, cut };
    let new_world = apply_split(world, mv, &ctx.scoring.world)?;
    let log_q_forward = split_log_prob(world, ctx, mv);
    let merges = merge_moves(&new_world, ctx);
    debug_assert!(!merges.is_empty());
    let log_q_reverse = -(merges.len() as f64).ln();
    Some(Proposal { kernel: Kernel::Split, new_world, log_q_forward, log_q_reverse })
}

pub fn kernel_merge(
    world: &SemanticWorld,
    ctx: &ProposalContext,
    rng: &mut ChainRng,
) -> Option<Proposal> {
    let moves = merge_moves(world, ctx);
    if moves.is_empty() {
        return None;
    }
    let mv = moves[rng.gen_range(0..moves.len())];
    let log_q_reverse = merge_reverse_log_prob(world, ctx, mv)?;
    let (new_world, _deleted) = apply_merge(world, mv, &ctx.scoring.world)?;
    let log_q_forward = -(moves.len() as f64).ln();
    Some(Proposal { kernel: Kernel::Merge, new_world, log_q_forward, log_q_reverse })
}

fn kernel_resize(
    world: &SemanticWorld,
    ctx: &ProposalContext,
    rng: &mut ChainRng,
    grow: bool,
) -> Option<Proposal> {
    let moves = resize_moves(world, ctx, grow);
    if moves.is_empty() {
        return None;
    }
    let mut units: Vec<usize> = moves.iter().map(|m| m.unit).collect();
    units.dedup();
    let unit = units[rng.gen_range(0..units.len())];
    let sides: Vec<&ResizeMove> = moves.iter().filter(|m| m.unit == unit).collect();
    let mv = *sides[rng.gen_range(0..sides.len())];
    let k = sample_geo(rng, mv.cap, ctx.config.p_geo);
    let new_world = apply_resize(world, unit, mv.side, k as i32, grow, &ctx.scoring.world)?;
    let log_q_forward = resize_log_prob(&moves, unit, mv.side, k, ctx.config.p_geo);
    // The inverse displaces the same wall back, so locate the resized
    // rectangle in the new world and price the opposite kernel's move.
    let u = world.units()[unit];
    let d = if grow { k as i32 } else { -(k as i32) };
    let rect = match mv.side {
        WallSide::Left => Unit::new(u.x0() - d, u.y0(), u.x1(), u.y1()),
        WallSide::Right => Unit::new(u.x0(), u.y0(), u.x1() + d, u.y1()),
        WallSide::Top => Unit::new(u.x0(), u.y0() - d, u.x1(), u.y1()),
        WallSide::Bottom => Unit::new(u.x0(), u.y0(), u.x1(), u.y1() + d),
    }
    .ok()?;
    let new_idx = find_unit(&new_world, &rect)?;
    let rev_moves = resize_moves(&new_world, ctx, !grow);
    let log_q_reverse = resize_log_prob(&rev_moves, new_idx, mv.side, k, ctx.config.p_geo);
    let kernel = if grow { Kernel::Dilate } else { Kernel::Shrink };
    Some(Proposal { kernel, new_world, log_q_forward, log_q_reverse })
}

pub fn kernel_shrink(
    world: &SemanticWorld,
    ctx: &ProposalContext,
    rng: &mut ChainRng,
) -> Option<Proposal> {
    kernel_resize(world, ctx, rng, false)
}

pub fn kernel_dilate(
    world: &SemanticWorld,
    ctx: &ProposalContext,
    rng: &mut ChainRng,
) -> Option<Proposal> {
    kernel_resize(world, ctx, rng, true)
}

pub fn kernel_allocate_door(
    world: &SemanticWorld,
    ctx: &ProposalContext,
    rng: &mut ChainRng,
) -> Option<Proposal> {
    let moves = alloc_moves(world, ctx);
    if moves.is_empty() {
        return None;
    }
    let weights: Vec<f64> =
        moves.iter().map(|&(ci, _, _)| ctx.door_candidates[ci].gap_support).collect();
    let (ci, i, j) = moves[pick_weighted(rng, &weights)];
    let door = Door::new(i, j, ctx.door_candidates[ci].segment).ok()?;
    let new_world = apply_alloc(world, i, j, door.segment, &ctx.scoring.world)?;
    let log_q_forward = alloc_log_prob(world, ctx, &door)?;
    let deletable = deletable_doors(&new_world, ctx);
    debug_assert!(!deletable.is_empty());
    let log_q_reverse = -(deletable.len() as f64).ln();
    Some(Proposal { kernel: Kernel::AllocateDoor, new_world, log_q_forward, log_q_reverse })
}

pub fn kernel_delete_door(
    world: &SemanticWorld,
    ctx: &ProposalContext,
    rng: &mut ChainRng,
) -> Option<Proposal> {
    let deletable = deletable_doors(world, ctx);
    if deletable.is_empty() {
        return None;
    }
    let di = deletable[rng.gen_range(0..deletable.len())];
    let door = world.doors()[di];
    let mut doors = world.doors().to_vec();
    doors.remove(di);
    let (new_world, dropped) =
        SemanticWorld::assemble(world.units().to_vec(), doors, &ctx.scoring.world);
    if !dropped.is_empty() {
        debug_assert!(false, "deleting a door cannot invalidate the rest");
        return None;
    }
    let log_q_forward = -(deletable.len() as f64).ln();
    let log_q_reverse = alloc_log_prob(&new_world, ctx, &door)?;
    Some(Proposal { kernel: Kernel::DeleteDoor, new_world, log_q_forward, log_q_reverse })
}

pub fn kernel_interchange(
    world: &SemanticWorld,
    ctx: &ProposalContext,
    rng: &mut ChainRng,
) -> Option<Proposal> {
    let moves = interchange_moves(world, ctx);
    if moves.is_empty() {
        return None;
    }
    let mut pairs: Vec<(usize, usize)> = moves.iter().map(|m| (m.low, m.high)).collect();
    pairs.dedup();
    let pair = pairs[rng.gen_range(0..pairs.len())];
    let dirs: Vec<&InterchangeMove> =
        moves.iter().filter(|m| (m.low, m.high) == pair).collect();
    let mv = *dirs[rng.gen_range(0..dirs.len())];
    let k = sample_geo(rng, mv.cap, ctx.config.p_geo);
    let new_world = apply_interchange(world, &mv, k as i32, &ctx.scoring.world)?;
    let log_q_forward = interchange_log_prob(&moves, &mv, k, ctx.config.p_geo);
    // Reverse: the same pair, relocated by rectangle, shifted back.
    let shift = mv.dir * k as i32;
    let (lu, hu) = (world.units()[mv.low], world.units()[mv.high]);
    let (nl, nh) = match mv.axis {
        Axis::Vertical => (
            Unit::new(lu.x0(), lu.y0(), mv.line + shift, lu.y1()).ok()?,
            Unit::new(mv.line + shift, hu.y0(), hu.x1(), hu.y1()).ok()?,
        ),
        Axis::Horizontal => (
            Unit::new(lu.x0(), lu.y0(), lu.x1(), mv.line + shift).ok()?,
            Unit::new(hu.x0(), mv.line + shift, hu.x1(), hu.y1()).ok()?,
        ),
    };
    let li = find_unit(&new_world, &nl)?;
    let hi = find_unit(&new_world, &nh)?;
    let rev_moves = interchange_moves(&new_world, ctx);
    let rev = rev_moves.iter().find(|m| m.low == li && m.high == hi && m.dir == -mv.dir)?;
    debug_assert_eq!(rev.line, mv.line + shift);
    let log_q_reverse = interchange_log_prob(&rev_moves, rev, k, ctx.config.p_geo);
    Some(Proposal { kernel: Kernel::Interchange, new_world, log_q_forward, log_q_reverse })
}

fn propose(
    kernel: Kernel,
    world: &SemanticWorld,
    ctx: &ProposalContext,
    rng: &mut ChainRng,
) -> Option<Proposal> {
    match kernel {
        Kernel::Add => kernel_add(world, ctx, rng),
        Kernel::Remove => kernel_remove(world, ctx, rng),
        Kernel::Split => kernel_split(world, ctx, rng),
        Kernel::Merge => kernel_merge(world, ctx, rng),
        Kernel::Shrink => kernel_shrink(world, ctx, rng),
        Kernel::Dilate => kernel_dilate(world, ctx, rng),
        Kernel::AllocateDoor => kernel_allocate_door(world, ctx, rng),
        Kernel::DeleteDoor => kernel_delete_door(world, ctx, rng),
        Kernel::Interchange => kernel_interchange(world, ctx, rng),
    }
}

/// Whether a kernel has at least one move from this world.
fn has_moves(kernel: Kernel, world: &SemanticWorld, ctx: &ProposalContext) -> bool {
    match kernel {
        Kernel::Add => !addable_candidates(world, ctx).is_empty(),
        Kernel::Remove => !removable_units(world, ctx).is_empty(),
        Kernel::Split => !split_moves(world, ctx).is_empty(),
        Kernel::Merge => !merge_moves(world, ctx).is_empty(),
        Kernel::Shrink => !resize_moves(world, ctx, false).is_empty(),
        Kernel::Dilate => !resize_moves(world, ctx, true).is_empty(),
        Kernel::AllocateDoor => !alloc_moves(world, ctx).is_empty(),
        Kernel::DeleteDoor => !deletable_doors(world, ctx).is_empty(),
        Kernel::Interchange => !interchange_moves(world, ctx).is_empty(),
    }
}

/// Kernels with positive weight and at least one move, with their weights.
fn applicable_kernels(
    world: &SemanticWorld,
    ctx: &ProposalContext,
) -> (Vec<Kernel>, Vec<f64>, f64) {
    let mut kernels = Vec::new();
    let mut weights = Vec::new();
    let mut total = 0.0;
    for k in Kernel::ALL {
        let w = ctx.config.kernel_weights[k.index()];
        if w > 0.0 && has_moves(k, world, ctx) {
            kernels.push(k);
            weights.push(w);
            total += w;
        }
    }
    (kernels, weights, total)
}

// ---------------------------------------------------------------------------
// Chain state and stepping.

/// Everything the chain keeps hot: the world, its raster, the per-cell
/// coverage counts, and the integer tally those two induce against the map.
struct ChainState {
    world: SemanticWorld,
    raster: ClassifiedGrid,
    coverage: Vec<u16>,
    tally: Tally,
    theta: ThetaMatrix,
    log_posterior: f64,
}

impl ChainState {
    fn new(world: SemanticWorld, ctx: &ProposalContext) -> Result<ChainState> {
        let dims = ctx.dims();
        let raster = world.rasterize(dims, ctx.scoring.world.wall_thickness)?;
        let coverage = world.overlap_count_field(dims);
        let tally = likelihood_tally(ctx.map, &raster, &coverage)?;
        let theta = ctx.theta_of(&world);
        let log_prior = prior_log(&world, &theta, ctx.scoring)?;
        let log_posterior = tally.log_likelihood(ctx.scoring) + log_prior;
        Ok(ChainState { world, raster, coverage, tally, theta, log_posterior })
    }

    /// World clone carrying its theta cache, for traces and output.
    fn snapshot(&self) -> SemanticWorld {
        let mut w = self.world.clone();
        w.set_theta(self.theta.clone()).expect("theta sized to world");
        w
    }

    /// Retallies `dirty` under `next`, mutating raster and coverage in
    /// place. Returns the would-be tally and posterior without committing.
    fn evaluate(
        &mut self,
        next: &SemanticWorld,
        dirty: CellRect,
        ctx: &ProposalContext,
    ) -> Result<(Tally, ThetaMatrix, f64)> {
        let t = ctx.scoring.world.wall_thickness;
        let mut tally = self.tally;
        self.retally(dirty, ctx, &mut tally, false);
        next.paint_region(&mut self.raster, dirty, t);
        recount_coverage(next, dirty, &mut self.coverage, self.raster.width);
        self.retally(dirty, ctx, &mut tally, true);
        let theta = ctx.theta_of(next);
        let log_prior = prior_log(next, &theta, ctx.scoring)?;
        let log_posterior = tally.log_likelihood(ctx.scoring) + log_prior;
        Ok((tally, theta, log_posterior))
    }

    /// Paints `dirty` back from the current world after a rejected move.
    fn restore(&mut self, dirty: CellRect, ctx: &ProposalContext) {
        let t = ctx.scoring.world.wall_thickness;
        self.world.paint_region(&mut self.raster, dirty, t);
        recount_coverage(&self.world, dirty, &mut self.coverage, self.raster.width);
    }

    fn retally(&self, dirty: CellRect, ctx: &ProposalContext, tally: &mut Tally, add: bool) {
        let w = self.raster.width;
        let map = ctx.map.cells();
        let raster = self.raster.cells();
        for y in dirty.y0..dirty.y1 {
            let row = y as usize * w;
            for x in dirty.x0..dirty.x1 {
                let i = row + x as usize;
                if add {
                    tally.observe(raster[i], map[i], self.coverage[i]);
                } else {
                    tally.retract(raster[i], map[i], self.coverage[i]);
                }
            }
        }
    }
}

fn recount_coverage(world: &SemanticWorld, dirty: CellRect, coverage: &mut [u16], width: usize) {
    for y in dirty.y0..dirty.y1 {
        let row = y as usize * width;
        for x in dirty.x0..dirty.x1 {
            coverage[row + x as usize] = 0;
        }
    }
    for u in world.units() {
        let r = u.rect().intersect(&dirty);
        if r.is_empty() {
            continue;
        }
        for y in r.y0..r.y1 {
            let row = y as usize * width;
            for x in r.x0..r.x1 {
                coverage[row + x as usize] += 1;
            }
        }
    }
}

/// Cells a door opening touches, one wall thickness to each side of its
/// line.
fn door_dirty(segment: [[i32; 2]; 2], t: i32) -> CellRect {
    let (a, b) = (segment[0], segment[1]);
    if a[0] == b[0] {
        CellRect::new(a[0] - t, a[1].min(b[1]), a[0] + t, a[1].max(b[1]))
    } else {
        CellRect::new(a[0].min(b[0]), a[1] - t, a[0].max(b[0]), a[1] + t)
    }
}

/// Hull of every cell whose painted state could differ between two worlds:
/// rectangles of units present in exactly one, and openings of doors whose
/// segment is present in exactly one.
fn dirty_rect(old: &SemanticWorld, new: &SemanticWorld, t: i32) -> CellRect {
    let mut dirty = CellRect::new(0, 0, 0, 0);
    for u in old.units() {
        if !new.units().contains(u) {
            dirty = dirty.hull(&u.rect());
        }
    }
    for u in new.units() {
        if !old.units().contains(u) {
            dirty = dirty.hull(&u.rect());
        }
    }
    let old_segs: Vec<[[i32; 2]; 2]> = old.doors().iter().map(|d| d.segment).collect();
    let new_segs: Vec<[[i32; 2]; 2]> = new.doors().iter().map(|d| d.segment).collect();
    for d in old.doors() {
        if !new_segs.contains(&d.segment) {
            dirty = dirty.hull(&door_dirty(d.segment, t));
        }
    }
    for d in new.doors() {
        if !old_segs.contains(&d.segment) {
            dirty = dirty.hull(&door_dirty(d.segment, t));
        }
    }
    dirty
}

/// Log acceptance ratio before clamping: posterior gain over temperature
/// plus the reverse-minus-forward proposal terms, selection included.
fn accept_log_ratio(
    d_post: f64,
    temperature: f64,
    log_q_forward: f64,
    log_q_reverse: f64,
    log_sel_forward: f64,
    log_sel_reverse: f64,
) -> f64 {
    d_post / temperature + (log_q_reverse + log_sel_reverse) - (log_q_forward + log_sel_forward)
}

/// A single sampling chain over worlds, stepped one proposal at a time.
pub struct Chain<'a> {
    ctx: ProposalContext<'a>,
    state: ChainState,
    rng: ChainRng,
    iteration: u64,
    temperature: f64,
    best_world: SemanticWorld,
    best_score: f64,
    samples: Vec<Sample>,
    acceptance: [KernelStats; 9],
}

impl<'a> Chain<'a> {
    pub fn new(
        map: &'a ClassifiedGrid,
        scoring: &'a ScoringParams,
        detect: &DetectorParams,
        config: &'a ChainConfig,
    ) -> Result<Chain<'a>> {
        let ctx = ProposalContext::new(map, scoring, detect, config)?;
        let mut rng = ChainRng::seed_from_u64(config.seed);
        let init = initial_world(&ctx, &mut rng)?;
        let state = ChainState::new(init, &ctx)?;
        let temperature = config.annealing.map_or(1.0, |a| a.t0.max(a.floor));
        let best_world = state.snapshot();
        let best_score = state.log_posterior;
        Ok(Chain {
            ctx,
            state,
            rng,
            iteration: 0,
            temperature,
            best_world,
            best_score,
            samples: Vec::new(),
            acceptance: [KernelStats::default(); 9],
        })
    }

    pub fn world(&self) -> &SemanticWorld {
        &self.state.world
    }

    pub fn log_posterior(&self) -> f64 {
        self.state.log_posterior
    }

    pub fn tally(&self) -> &Tally {
        &self.state.tally
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn context(&self) -> &ProposalContext<'a> {
        &self.ctx
    }

    /// One proposal: select an applicable kernel, draw its move, and accept
    /// with min(1, exp(dS/T + log q_rev - log q_fwd)), q terms carrying the
    /// kernel-selection probabilities of both directions. Draw order per
    /// step: kernel selection, kernel-internal choices, then the acceptance
    /// uniform (skipped when the move is certainly rejected).
    pub fn step(&mut self) -> Result<StepInfo> {
        self.iteration += 1;
        let (kernels, weights, total) = applicable_kernels(&self.state.world, &self.ctx);
        if kernels.is_empty() {
            return Err(Error::Stall(format!(
                "no applicable move kernel from a {}-unit world at iteration {}",
                self.state.world.n(),
                self.iteration
            )));
        }
        let ki = pick_weighted(&mut self.rng, &weights);
        let kernel = kernels[ki];
        let log_sel_forward = (weights[ki] / total).ln();
        let stats = &mut self.acceptance[kernel.index()];
        stats.proposed += 1;
        let Some(proposal) = propose(kernel, &self.state.world, &self.ctx, &mut self.rng) else {
            // The enumerated move could not be rebuilt; treat as a rejected
            // proposal rather than poisoning the chain.
            let info = self.finish_step(kernel, false, 0.0);
            return Ok(info);
        };
        let w_inv = self.ctx.config.kernel_weights[kernel.inverse().index()];
        if w_inv <= 0.0 {
            let info = self.finish_step(kernel, false, 0.0);
            return Ok(info);
        }
        let (_, _, rev_total) = applicable_kernels(&proposal.new_world, &self.ctx);
        let log_sel_reverse = (w_inv / rev_total).ln();
        let t = self.ctx.scoring.world.wall_thickness as i32;
        let dims = self.ctx.dims();
        let dirty = dirty_rect(&self.state.world, &proposal.new_world, t)
            .clamp_to(dims.0, dims.1);
        let (tally, theta, log_posterior) =
            self.state.evaluate(&proposal.new_world, dirty, &self.ctx)?;
        let ratio = accept_log_ratio(
            log_posterior - self.state.log_posterior,
            self.temperature,
            proposal.log_q_forward,
            proposal.log_q_reverse,
            log_sel_forward,
            log_sel_reverse,
        );
        let lambda = ratio.min(0.0).exp();
        let accepted = lambda >= 1.0 || self.rng.gen::<f64>() < lambda;
        if accepted {
            self.state.world = proposal.new_world;
            self.state.tally = tally;
            self.state.theta = theta;
            self.state.log_posterior = log_posterior;
            self.acceptance[kernel.index()].accepted += 1;
        } else {
            self.state.restore(dirty, &self.ctx);
        }
        let info = self.finish_step(kernel, accepted, lambda);
        Ok(info)
    }

    /// Best tracking, sample recording, annealing update.
    fn finish_step(&mut self, kernel: Kernel, accepted: bool, lambda: f64) -> StepInfo {
        if self.state.log_posterior > self.best_score {
            self.best_score = self.state.log_posterior;
            self.best_world = self.state.snapshot();
        }
        let cfg = self.ctx.config;
        if self.iteration > cfg.burn_in && (self.iteration - cfg.burn_in) % cfg.record_every == 0
        {
            self.samples.push(Sample {
                iteration: self.iteration,
                log_posterior: self.state.log_posterior,
                world: self.state.snapshot(),
            });
        }
        if let Some(a) = &cfg.annealing {
            self.temperature = (self.temperature * a.decay).max(a.floor);
        }
        StepInfo {
            iteration: self.iteration,
            kernel,
            accepted,
            lambda,
            log_posterior: self.state.log_posterior,
        }
    }

    pub fn into_trace(self) -> ChainTrace {
        ChainTrace {
            samples: self.samples,
            best_world: self.best_world,
            best_score: self.best_score,
            iterations: self.iteration,
            acceptance: self.acceptance,
        }
    }
}

/// First world of a chain, drawn before any steps.
fn initial_world(ctx: &ProposalContext, rng: &mut ChainRng) -> Result<SemanticWorld> {
    match ctx.config.init {
        InitMode::Random => {
            if ctx.candidates.is_empty() {
                return Ok(SemanticWorld::empty());
            }
            let want = rng.gen_range(1..=3usize).min(ctx.candidates.len());
            let mut order: Vec<usize> = (0..ctx.candidates.len()).collect();
            order.shuffle(rng);
            let units: Vec<Unit> =
                order[..want].iter().map(|&i| ctx.candidates[i].rect).collect();
            Ok(SemanticWorld::assemble(units, Vec::new(), &ctx.scoring.world).0)
        }
        InitMode::Detected => {
            let mut world = SemanticWorld::empty();
            let mut score = score_quick(&world, ctx)?;
            for c in &ctx.candidates {
                if world.units().contains(&c.rect) {
                    continue;
                }
                let mut units = world.units().to_vec();
                units.push(c.rect);
                let trial = SemanticWorld::assemble(units, Vec::new(), &ctx.scoring.world).0;
                let trial_score = score_quick(&trial, ctx)?;
                if trial_score > score {
                    world = trial;
                    score = trial_score;
                }
            }
            Ok(world)
        }
    }
}

fn score_quick(world: &SemanticWorld, ctx: &ProposalContext) -> Result<f64> {
    let dims = ctx.dims();
    let raster = world.rasterize(dims, ctx.scoring.world.wall_thickness)?;
    let coverage = world.overlap_count_field(dims);
    let tally = likelihood_tally(ctx.map, &raster, &coverage)?;
    let theta = ctx.theta_of(world);
    Ok(tally.log_likelihood(ctx.scoring) + prior_log(world, &theta, ctx.scoring)?)
}

/// Runs one chain to completion.
///
/// A map that yields no detector candidates while the initial world is empty
/// has nothing to propose; that run finishes immediately with the empty
/// world rather than stalling, since an empty map honestly scores best as an
/// empty world. Any later step without an applicable kernel is a stall
/// error: it means the kernel weights cannot move the chain.
pub fn run(
    map_c: &ClassifiedGrid,
    scoring: &ScoringParams,
    detect: &DetectorParams,
    config: &ChainConfig,
) -> Result<ChainTrace> {
    let mut chain = Chain::new(map_c, scoring, detect, config)?;
    if chain.world().n() == 0 && chain.context().candidates.is_empty() {
        return Ok(chain.into_trace());
    }
    for _ in 0..config.max_iterations {
        chain.step()?;
    }
    Ok(chain.into_trace())
}

/// Runs `chains` independent chains with consecutive seeds and returns the
/// trace with the highest best score, ties resolved toward the lowest seed.
/// Chains run concurrently when the parallel feature is on.
pub fn run_chains(
    map_c: &ClassifiedGrid,
    scoring: &ScoringParams,
    detect: &DetectorParams,
    config: &ChainConfig,
    chains: usize,
) -> Result<ChainTrace> {
    if chains == 0 {
        return Err(Error::Config("at least one chain is required".into()));
    }
    let traces: Vec<Result<ChainTrace>> = exec::map_indexed(chains, |i| {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(i as u64);
        run(map_c, scoring, detect, &cfg)
    });
    let mut best: Option<ChainTrace> = None;
    for trace in traces {
        let trace = trace?;
        let better = best.as_ref().map_or(true, |b| trace.best_score > b.best_score);
        if better {
            best = Some(trace);
        }
    }
    Ok(best.expect("chains >= 1"))
}

/// Exhaustive posterior over an explicit world family. Probabilities are
/// renormalized so they sum to one exactly up to final rounding.
pub fn enumerate_posterior(
    map_c: &ClassifiedGrid,
    worlds: &[SemanticWorld],
    params: &ScoringParams,
) -> Result<Vec<f64>> {
    if worlds.is_empty() {
        return Err(Error::Config("posterior enumeration needs at least one world".into()));
    }
    if worlds.len() > MAX_ENUM_STATES {
        return Err(Error::Capacity(format!(
            "posterior enumeration over {} states exceeds the {MAX_ENUM_STATES}-state cap",
            worlds.len()
        )));
    }
    let scores: Vec<f64> = exec::map_indexed(worlds.len(), |i| {
        crate::scoring::posterior_log(map_c, &worlds[i], params).map(|s| s.log_posterior)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok(probs)
}
