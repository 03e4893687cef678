//! Posterior scoring: cell-wise likelihood, knowledge-shaped prior, and the
//! cell prediction rate.
//!
//! The likelihood of a map given a world multiplies, per cell, an overlap
//! penalty `psi^max(coverage-1, 0)` with a lookup `p(map state | predicted
//! state)`. All accumulation runs over an integer contingency tally so the
//! log score is a short fixed-order linear combination: scores are
//! bit-identical between sequential and parallel runs and between full and
//! incremental rescoring.
//!
//! The prior multiplies, per ordered unit pair flagged by the theta matrix,
//! a zero-mean kernel over the facing-wall length difference. Theta itself
//! comes from exact knowledge-base inference over the unit types and the
//! relation matrix.

use crate::error::{Error, Result};
use crate::exec;
use crate::gridmap::{CellState, ClassifiedGrid, ClassifyThresholds};
use crate::mln::{
    ground, infer_exact, kb_predicates, kb_same_length_weighted, Evidence, KbWeights,
};
use crate::world::{
    Relation, RelationMatrix, SemanticWorld, Unit, UnitType, Wall, WorldParams,
};

pub use crate::world::ThetaMatrix;

/// Conditional probability table `p(map state | predicted state)`, indexed
/// `[world][map]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    p: [[f64; 3]; 3],
    log_p: [[f64; 3]; 3],
    /// Distinct log values with the (world, map) index pairs sharing each,
    /// in row-major first-occurrence order. Grouping by identical value
    /// keeps the log-likelihood a minimal-length linear combination.
    groups: Vec<(f64, Vec<(usize, usize)>)>,
}

impl LookupTable {
    pub fn new(p: [[f64; 3]; 3]) -> Result<LookupTable> {
        for (w, row) in p.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "lookup row {w} sums to {sum}, expected 1"
                )));
            }
            for (m, &v) in row.iter().enumerate() {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(Error::Config(format!(
                        "lookup entry ({w},{m}) = {v} outside (0,1]"
                    )));
                }
            }
        }
        let mut log_p = [[0.0; 3]; 3];
        let mut groups: Vec<(f64, Vec<(usize, usize)>)> = Vec::new();
        for w in 0..3 {
            for m in 0..3 {
                let l = p[w][m].ln();
                log_p[w][m] = l;
                match groups.iter_mut().find(|(v, _)| v.to_bits() == l.to_bits()) {
                    Some((_, members)) => members.push((w, m)),
                    None => groups.push((l, vec![(w, m)])),
                }
            }
        }
        Ok(LookupTable { p, log_p, groups })
    }

    pub fn prob(&self, world: CellState, map: CellState) -> f64 {
        self.p[world.index()][map.index()]
    }

    pub fn log_prob(&self, world: CellState, map: CellState) -> f64 {
        self.log_p[world.index()][map.index()]
    }
}

impl Default for LookupTable {
    /// 0.8 on the diagonal, 0.1 off it.
    fn default() -> LookupTable {
        LookupTable::new([
            [0.8, 0.1, 0.1],
            [0.1, 0.8, 0.1],
            [0.1, 0.1, 0.8],
        ])
        .expect("default lookup table is valid")
    }
}

/// All knobs of the posterior score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringParams {
    /// Overlap penalization factor in (0,1); each doubly-covered cell
    /// multiplies the likelihood by this per extra unit.
    pub psi: f64,
    pub lookup: LookupTable,
    /// Scale (cells) of the facing-wall length-difference kernel.
    pub gaussian_sigma: f64,
    /// Same-length marginal cutoff for activating a pair prior.
    pub theta_threshold: f64,
    /// Use d^2 instead of d in the pair-prior exponent.
    pub squared_distance: bool,
    /// Map intensity classification thresholds.
    pub classify: ClassifyThresholds,
    /// Geometry parameters shared with world assembly and rasterization.
    pub world: WorldParams,
    /// Soft weights of the same-length knowledge base.
    pub kb: KbWeights,
    /// Exact-inference component size limit.
    pub max_enum_atoms: usize,
}

impl Default for ScoringParams {
    fn default() -> ScoringParams {
        ScoringParams {
            psi: 0.5,
            lookup: LookupTable::default(),
            gaussian_sigma: 5.0,
            theta_threshold: 0.5,
            squared_distance: false,
            classify: ClassifyThresholds::default(),
            world: WorldParams::default(),
            kb: KbWeights::default(),
            max_enum_atoms: 20,
        }
    }
}

impl ScoringParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.psi > 0.0 && self.psi < 1.0) {
            return Err(Error::Config(format!("psi = {} outside (0,1)", self.psi)));
        }
        if !(self.gaussian_sigma > 0.0) {
            return Err(Error::Config(format!(
                "gaussian_sigma = {} must be positive",
                self.gaussian_sigma
            )));
        }
        if !(self.theta_threshold > 0.0 && self.theta_threshold < 1.0) {
            return Err(Error::Config(format!(
                "theta_threshold = {} outside (0,1)",
                self.theta_threshold
            )));
        }
        if self.max_enum_atoms == 0 {
            return Err(Error::Config("max_enum_atoms must be at least 1".into()));
        }
        self.classify.validate()?;
        Ok(())
    }
}

/// Integer contingency tally of (predicted state, map state) cell pairs plus
/// the total overlap excess. The log-likelihood is a linear function of the
/// tally, so equal tallies give bit-identical scores no matter how they were
/// accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    counts: [[u64; 3]; 3],
    excess: u64,
}

impl Tally {
    pub fn observe(&mut self, world: CellState, map: CellState, coverage: u16) {
        self.counts[world.index()][map.index()] += 1;
        self.excess += u64::from(coverage.saturating_sub(1));
    }

    pub fn retract(&mut self, world: CellState, map: CellState, coverage: u16) {
        self.counts[world.index()][map.index()] -= 1;
        self.excess -= u64::from(coverage.saturating_sub(1));
    }

    pub fn merge(mut self, other: Tally) -> Tally {
        for w in 0..3 {
            for m in 0..3 {
                self.counts[w][m] += other.counts[w][m];
            }
        }
        self.excess += other.excess;
        self
    }

    pub fn total_cells(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Cells counted beyond the first covering unit.
    pub fn overlap_excess_cells(&self) -> u64 {
        self.excess
    }

    /// Sum of per-cell log lookup terms.
    pub fn match_total(&self, lookup: &LookupTable) -> f64 {
        let mut acc = 0.0f64;
        for (log, members) in &lookup.groups {
            let n: u64 = members.iter().map(|&(w, m)| self.counts[w][m]).sum();
            if n > 0 {
                acc += (n as f64) * log;
            }
        }
        acc
    }

    /// Total overlap penalty `excess * ln psi`.
    pub fn overlap_penalty(&self, psi: f64) -> f64 {
        if self.excess == 0 {
            0.0
        } else {
            (self.excess as f64) * psi.ln()
        }
    }

    pub fn log_likelihood(&self, params: &ScoringParams) -> f64 {
        self.match_total(&params.lookup) + self.overlap_penalty(params.psi)
    }
}

/// Tallies a classified map against a predicted raster and its coverage
/// field.
pub fn likelihood_tally(
    map_c: &ClassifiedGrid,
    raster: &ClassifiedGrid,
    coverage: &[u16],
) -> Result<Tally> {
    if map_c.width != raster.width || map_c.height != raster.height {
        return Err(Error::Geometry(format!(
            "map is {}x{} but raster is {}x{}",
            map_c.width, map_c.height, raster.width, raster.height
        )));
    }
    let n = map_c.width * map_c.height;
    if coverage.len() != n {
        return Err(Error::Geometry(format!(
            "coverage field has {} cells, expected {n}",
            coverage.len()
        )));
    }
    let map_cells = map_c.cells();
    let raster_cells = raster.cells();
    Ok(exec::fold_blocks(
        n,
        Tally::default,
        |range| {
            let mut t = Tally::default();
            for i in range {
                t.observe(raster_cells[i], map_cells[i], coverage[i]);
            }
            t
        },
        Tally::merge,
    ))
}

/// Sequential twin of [`likelihood_tally`], kept for benchmarks and
/// equivalence checks. Integer tallies make the two bit-identical.
pub fn likelihood_tally_seq(
    map_c: &ClassifiedGrid,
    raster: &ClassifiedGrid,
    coverage: &[u16],
) -> Result<Tally> {
    if map_c.width != raster.width || map_c.height != raster.height {
        return Err(Error::Geometry(format!(
            "map is {}x{} but raster is {}x{}",
            map_c.width, map_c.height, raster.width, raster.height
        )));
    }
    let n = map_c.width * map_c.height;
    if coverage.len() != n {
        return Err(Error::Geometry(format!(
            "coverage field has {} cells, expected {n}",
            coverage.len()
        )));
    }
    let map_cells = map_c.cells();
    let raster_cells = raster.cells();
    Ok(exec::fold_blocks_seq(
        n,
        Tally::default,
        |range| {
            let mut t = Tally::default();
            for i in range {
                t.observe(raster_cells[i], map_cells[i], coverage[i]);
            }
            t
        },
        Tally::merge,
    ))
}

/// Log of the cell-wise map likelihood given the world.
pub fn likelihood_log(
    map_c: &ClassifiedGrid,
    world: &SemanticWorld,
    params: &ScoringParams,
) -> Result<f64> {
    let dims = (map_c.width, map_c.height);
    let raster = world.rasterize(dims, params.world.wall_thickness)?;
    let coverage = world.overlap_count_field(dims);
    let tally = likelihood_tally(map_c, &raster, &coverage)?;
    Ok(tally.log_likelihood(params))
}

fn type_predicate(t: UnitType) -> &'static str {
    match t {
        UnitType::Room => "Room",
        UnitType::Corridor => "Corr",
        UnitType::Hall => "Hall",
    }
}

/// Exact same-length marginals from types and relations: evidence asserts
/// each unit's type and every ordered relation entry, then queries SaLe.
fn same_length_marginals(
    types: &[UnitType],
    relations: &RelationMatrix,
    params: &ScoringParams,
) -> Result<Vec<Vec<f64>>> {
    let n = types.len();
    let names: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let constants: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let mut evidence = Evidence::new(kb_predicates());
    for (i, &t) in types.iter().enumerate() {
        evidence.assert(type_predicate(t), &[&names[i]], true)?;
    }
    for p in 0..n {
        for q in 0..n {
            let pred = match relations.get(p, q) {
                Relation::Adjacent => "Adj",
                Relation::Irrelevant => "Irr",
            };
            evidence.assert(pred, &[&names[p], &names[q]], true)?;
        }
    }
    let kb = kb_same_length_weighted(&params.kb);
    let network = ground(&kb.formulas, &constants, &evidence)?;
    let result = infer_exact(&network, params.max_enum_atoms)?;
    let mut out = vec![vec![0.0; n]; n];
    for p in 0..n {
        for q in 0..n {
            out[p][q] = result
                .marginal("SaLe", &[&names[p], &names[q]])
                .expect("every SaLe atom is free");
        }
    }
    Ok(out)
}

/// Theta from full knowledge-base inference: `theta[p][q]` is true when the
/// same-length marginal exceeds the threshold and `p != q`.
///
/// Requires the world's relation cache; compute it first with
/// [`SemanticWorld::refresh_relations`].
pub fn compute_theta(world: &SemanticWorld, params: &ScoringParams) -> Result<ThetaMatrix> {
    let relations = world
        .relations()
        .ok_or_else(|| Error::Geometry("relations not computed for this world".into()))?;
    theta_from_parts(world.types(), relations, params)
}

fn theta_from_parts(
    types: &[UnitType],
    relations: &RelationMatrix,
    params: &ScoringParams,
) -> Result<ThetaMatrix> {
    let n = types.len();
    let marginals = same_length_marginals(types, relations, params)?;
    let mut theta = ThetaMatrix::new(n);
    for p in 0..n {
        for q in (p + 1)..n {
            if marginals[p][q] > params.theta_threshold {
                theta.set_pair(p, q, true);
            }
        }
    }
    Ok(theta)
}

/// Memoized per-pair same-length marginals.
///
/// For the built-in knowledge base, no residual formula couples atoms of
/// distinct unit pairs, so the marginal of SaLe(p,q) depends only on the two
/// unit types and the pair relation. This table computes each of the 18
/// cases once on a two-unit system; [`PairMarginals::theta`] then matches
/// [`compute_theta`] exactly at a fraction of the cost.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMarginals {
    table: [[[f64; 2]; 3]; 3],
}

const TYPES: [UnitType; 3] = [UnitType::Room, UnitType::Corridor, UnitType::Hall];

impl PairMarginals {
    pub fn compute(params: &ScoringParams) -> Result<PairMarginals> {
        let mut table = [[[0.0; 2]; 3]; 3];
        for (ti, &tp) in TYPES.iter().enumerate() {
            for (tj, &tq) in TYPES.iter().enumerate() {
                for (ri, rel) in [Relation::Adjacent, Relation::Irrelevant].into_iter().enumerate()
                {
                    let mut relations = RelationMatrix::new(2);
                    relations.set_pair(0, 1, rel);
                    let m = same_length_marginals(&[tp, tq], &relations, params)?;
                    table[ti][tj][ri] = m[0][1];
                }
            }
        }
        Ok(PairMarginals { table })
    }

    pub fn marginal(&self, tp: UnitType, tq: UnitType, rel: Relation) -> f64 {
        let ti = TYPES.iter().position(|&t| t == tp).unwrap();
        let tj = TYPES.iter().position(|&t| t == tq).unwrap();
        let ri = match rel {
            Relation::Adjacent => 0,
            Relation::Irrelevant => 1,
        };
        self.table[ti][tj][ri]
    }

    /// Theta matrix equal to [`compute_theta`] for the same types and
    /// relations.
    pub fn theta(
        &self,
        types: &[UnitType],
        relations: &RelationMatrix,
        threshold: f64,
    ) -> ThetaMatrix {
        let n = types.len();
        let mut theta = ThetaMatrix::new(n);
        for p in 0..n {
            for q in (p + 1)..n {
                if self.marginal(types[p], types[q], relations.get(p, q)) > threshold {
                    theta.set_pair(p, q, true);
                }
            }
        }
        theta
    }
}

/// Length difference (cells) between the facing walls of two units.
///
/// Each wall of `a` is paired with the opposite-side wall of `b` on the
/// same axis; the pair with the smallest line distance wins, ties broken by
/// longer span overlap, then by side order.
pub fn facing_wall_difference(a: &Unit, b: &Unit) -> f64 {
    fn span_overlap(x: &Wall, y: &Wall) -> i64 {
        let lo = x.span.0.max(y.span.0);
        let hi = x.span.1.min(y.span.1);
        i64::from(hi - lo).max(0)
    }
    let a_walls = a.walls();
    let b_walls = b.walls();
    let mut best: Option<(i64, i64, usize)> = None;
    let mut diff = 0i64;
    for (idx, wa) in a_walls.iter().enumerate() {
        let wb = &b_walls[wa.side.opposite().index()];
        let dist = i64::from(wa.line) - i64::from(wb.line);
        let key = (dist.abs(), -span_overlap(wa, wb), idx);
        if best.map_or(true, |b| key < b) {
            best = Some(key);
            diff = (i64::from(wa.length()) - i64::from(wb.length())).abs();
        }
    }
    diff as f64
}

/// Per-pair prior contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPrior {
    pub p: usize,
    pub q: usize,
    /// Facing-wall length difference in cells.
    pub d: f64,
    /// Log of the pair factor.
    pub log_b: f64,
}

fn pair_terms(
    world: &SemanticWorld,
    theta: &ThetaMatrix,
    params: &ScoringParams,
) -> Result<Vec<PairPrior>> {
    let n = world.n();
    if theta.n() != n {
        return Err(Error::Geometry(format!(
            "theta is {}x{} but world has {} units",
            theta.n(),
            theta.n(),
            n
        )));
    }
    let denom = 2.0 * params.gaussian_sigma * params.gaussian_sigma;
    let mut terms = Vec::new();
    for p in 0..n {
        for q in 0..n {
            if p == q || !theta.get(p, q) {
                continue;
            }
            let d = facing_wall_difference(&world.units()[p], &world.units()[q]);
            let numer = if params.squared_distance { d * d } else { d };
            terms.push(PairPrior { p, q, d, log_b: -(numer / denom) });
        }
    }
    Ok(terms)
}

/// Log prior over ordered theta-true pairs; each symmetric pair contributes
/// in both directions.
pub fn prior_log(
    world: &SemanticWorld,
    theta: &ThetaMatrix,
    params: &ScoringParams,
) -> Result<f64> {
    Ok(pair_terms(world, theta, params)?.iter().map(|t| t.log_b).sum())
}

/// Posterior score with per-term diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorScore {
    pub log_likelihood: f64,
    pub log_prior: f64,
    pub log_posterior: f64,
    /// Sum of per-cell log lookup terms.
    pub match_total: f64,
    /// Overlap penalty `excess * ln psi`.
    pub overlap_penalty: f64,
    /// Cells counted beyond their first covering unit.
    pub overlap_cells: u64,
    pub per_pair_b: Vec<PairPrior>,
}

/// Scores a world against a classified map.
///
/// Uses the world's relation and theta caches when present; otherwise
/// derives both from the parameters.
pub fn posterior_log(
    map_c: &ClassifiedGrid,
    world: &SemanticWorld,
    params: &ScoringParams,
) -> Result<PosteriorScore> {
    let dims = (map_c.width, map_c.height);
    let raster = world.rasterize(dims, params.world.wall_thickness)?;
    let coverage = world.overlap_count_field(dims);
    let tally = likelihood_tally(map_c, &raster, &coverage)?;
    let match_total = tally.match_total(&params.lookup);
    let overlap_penalty = tally.overlap_penalty(params.psi);
    let log_likelihood = match_total + overlap_penalty;

    let theta = match world.theta() {
        Some(t) => t.clone(),
        None => {
            let owned_relations;
            let relations = match world.relations() {
                Some(r) => r,
                None => {
                    owned_relations = crate::world::detect_relations(
                        world.units(),
                        params.world.wall_thickness as i32,
                        &params.world.relations,
                    );
                    &owned_relations
                }
            };
            theta_from_parts(world.types(), relations, params)?
        }
    };
    let per_pair_b = pair_terms(world, &theta, params)?;
    let log_prior: f64 = per_pair_b.iter().map(|t| t.log_b).sum();

    Ok(PosteriorScore {
        log_likelihood,
        log_prior,
        log_posterior: log_likelihood + log_prior,
        match_total,
        overlap_penalty,
        overlap_cells: tally.overlap_excess_cells(),
        per_pair_b,
    })
}

/// Fraction of cells whose predicted state matches the classified map.
pub fn cell_prediction_rate(
    map_c: &ClassifiedGrid,
    world: &SemanticWorld,
    params: &ScoringParams,
) -> Result<f64> {
    let dims = (map_c.width, map_c.height);
    let raster = world.rasterize(dims, params.world.wall_thickness)?;
    let map_cells = map_c.cells();
    let raster_cells = raster.cells();
    let n = map_cells.len();
    let matches = exec::fold_blocks(
        n,
        || 0u64,
        |range| range.filter(|&i| map_cells[i] == raster_cells[i]).count() as u64,
        |a, b| a + b,
    );
    Ok(matches as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::RelationParams;

    fn unit(x0: i32, y0: i32, x1: i32, y1: i32) -> Unit {
        Unit::new(x0, y0, x1, y1).unwrap()
    }

    fn world_of(units: Vec<Unit>, types: Vec<UnitType>) -> SemanticWorld {
        SemanticWorld::from_parts(units, types, Vec::new()).unwrap()
    }

    fn with_relations(units: Vec<Unit>, types: Vec<UnitType>) -> SemanticWorld {
        let mut w = world_of(units, types);
        w.refresh_relations(&WorldParams::default());
        w
    }

    #[test]
    fn lookup_rejects_rows_off_unit_sum() {
        let mut p = [[0.8, 0.1, 0.1]; 3];
        p[1][1] = 0.2;
        assert!(matches!(LookupTable::new(p), Err(Error::Config(_))));
    }

    #[test]
    fn lookup_rejects_zero_entries() {
        // Rows sum to one but a certain prediction is still out of range.
        let p = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(LookupTable::new(p), Err(Error::Config(_))));
    }

    #[test]
    fn lookup_probabilities_round_trip() {
        let t = LookupTable::default();
        assert_eq!(t.prob(CellState::Occupied, CellState::Occupied), 0.8);
        assert_eq!(t.prob(CellState::Occupied, CellState::Free), 0.1);
        assert_eq!(t.log_prob(CellState::Unknown, CellState::Unknown), 0.8f64.ln());
    }

    #[test]
    fn params_validate_rejects_out_of_range() {
        let mut p = ScoringParams::default();
        p.psi = 1.0;
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        let mut p = ScoringParams::default();
        p.gaussian_sigma = 0.0;
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        let mut p = ScoringParams::default();
        p.theta_threshold = 1.0;
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        let mut p = ScoringParams::default();
        p.max_enum_atoms = 0;
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        assert!(ScoringParams::default().validate().is_ok());
    }

    #[test]
    fn tally_retract_undoes_observe() {
        let mut t = Tally::default();
        t.observe(CellState::Free, CellState::Occupied, 2);
        t.observe(CellState::Unknown, CellState::Unknown, 1);
        t.retract(CellState::Free, CellState::Occupied, 2);
        t.retract(CellState::Unknown, CellState::Unknown, 1);
        assert_eq!(t, Tally::default());
    }

    #[test]
    fn coverage_beyond_one_counts_as_excess() {
        let mut t = Tally::default();
        t.observe(CellState::Free, CellState::Free, 3);
        assert_eq!(t.overlap_excess_cells(), 2);
        t.observe(CellState::Free, CellState::Free, 0);
        t.observe(CellState::Free, CellState::Free, 1);
        assert_eq!(t.overlap_excess_cells(), 2);
        assert_eq!(t.total_cells(), 3);
    }

    #[test]
    fn empty_overlap_penalty_is_positive_zero() {
        let p = Tally::default().overlap_penalty(0.5);
        assert_eq!(p, 0.0);
        assert!(p.is_sign_positive());
    }

    // One multiply per distinct lookup value keeps the noise-free score
    // bit-identical to the closed form.
    #[test]
    fn identical_probabilities_share_one_multiply() {
        let mut t = Tally::default();
        for _ in 0..7 {
            t.observe(CellState::Free, CellState::Free, 1);
        }
        for _ in 0..5 {
            t.observe(CellState::Occupied, CellState::Occupied, 1);
        }
        for _ in 0..3 {
            t.observe(CellState::Unknown, CellState::Unknown, 1);
        }
        assert_eq!(t.match_total(&LookupTable::default()), 15.0 * 0.8f64.ln());
    }

    #[test]
    fn noise_free_map_scores_cells_times_log_diagonal() {
        let world = world_of(vec![unit(2, 2, 22, 12)], vec![UnitType::Room]);
        let params = ScoringParams::default();
        let map = world.rasterize((30, 20), params.world.wall_thickness).unwrap();
        let ll = likelihood_log(&map, &world, &params).unwrap();
        assert_eq!(ll, 600.0 * 0.8f64.ln());
    }

    #[test]
    fn one_cell_flip_moves_score_by_one_lookup_ratio() {
        let world = world_of(vec![unit(2, 2, 22, 12)], vec![UnitType::Room]);
        let params = ScoringParams::default();
        let map = world.rasterize((30, 20), params.world.wall_thickness).unwrap();
        let before = likelihood_log(&map, &world, &params).unwrap();
        let mut flipped = map.clone();
        assert_eq!(flipped.get(0, 19), CellState::Unknown);
        flipped.set(0, 19, CellState::Occupied);
        let after = likelihood_log(&flipped, &world, &params).unwrap();
        let expected = 0.1f64.ln() - 0.8f64.ln();
        assert!(((after - before) - expected).abs() < 1e-12);
    }

    #[test]
    fn parallel_and_sequential_tallies_are_identical() {
        let world = world_of(
            vec![unit(0, 0, 10, 10), unit(8, 0, 18, 10)],
            vec![UnitType::Room, UnitType::Room],
        );
        let dims = (20, 12);
        let raster = world.rasterize(dims, 2).unwrap();
        let coverage = world.overlap_count_field(dims);
        let mut noisy = raster.clone();
        noisy.set(3, 3, CellState::Occupied);
        noisy.set(15, 1, CellState::Free);
        let par = likelihood_tally(&noisy, &raster, &coverage).unwrap();
        let seq = likelihood_tally_seq(&noisy, &raster, &coverage).unwrap();
        assert_eq!(par, seq);
        let params = ScoringParams::default();
        assert_eq!(par.log_likelihood(&params), seq.log_likelihood(&params));
    }

    #[test]
    fn tally_rejects_mismatched_shapes() {
        let a = ClassifiedGrid::filled(4, 4, CellState::Free);
        let b = ClassifiedGrid::filled(5, 4, CellState::Free);
        assert!(matches!(
            likelihood_tally(&a, &b, &vec![1; 16]),
            Err(Error::Geometry(_))
        ));
        assert!(matches!(
            likelihood_tally(&a, &a, &vec![1; 15]),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn overlapping_units_pay_psi_per_extra_cover() {
        let world = world_of(
            vec![unit(0, 0, 10, 10), unit(8, 0, 18, 10)],
            vec![UnitType::Room, UnitType::Room],
        );
        let params = ScoringParams::default();
        let map = world.rasterize((20, 12), params.world.wall_thickness).unwrap();
        let score = posterior_log(&map, &world, &params).unwrap();
        assert_eq!(score.overlap_cells, 20);
        assert_eq!(score.overlap_penalty, 20.0 * 0.5f64.ln());
        assert_eq!(score.log_likelihood, score.match_total + score.overlap_penalty);
    }

    #[test]
    fn theta_requires_relation_cache() {
        let world = world_of(vec![unit(0, 0, 10, 10)], vec![UnitType::Room]);
        assert!(matches!(
            compute_theta(&world, &ScoringParams::default()),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn theta_flags_only_adjacent_room_pairs() {
        // Two rooms side by side over a corridor, with a third room
        // reachable only through the corridor. Only the side-by-side rooms
        // should be held to the same facing length.
        let units = vec![
            unit(0, 0, 10, 10),
            unit(0, 10, 20, 16),
            unit(0, 16, 10, 26),
            unit(10, 0, 20, 10),
        ];
        let types = vec![
            UnitType::Room,
            UnitType::Corridor,
            UnitType::Room,
            UnitType::Room,
        ];
        let world = with_relations(units, types);
        let theta = compute_theta(&world, &ScoringParams::default()).unwrap();
        for p in 0..4 {
            for q in 0..4 {
                let expected = (p, q) == (0, 3) || (p, q) == (3, 0);
                assert_eq!(theta.get(p, q), expected, "pair ({p},{q})");
            }
        }
    }

    #[test]
    fn single_unit_has_no_flagged_pairs() {
        let world = with_relations(vec![unit(0, 0, 10, 10)], vec![UnitType::Room]);
        let theta = compute_theta(&world, &ScoringParams::default()).unwrap();
        assert!(!theta.get(0, 0));
    }

    #[test]
    fn threshold_above_pair_marginal_clears_theta() {
        let world = with_relations(
            vec![unit(0, 0, 10, 10), unit(10, 0, 20, 10)],
            vec![UnitType::Room, UnitType::Room],
        );
        let mut params = ScoringParams::default();
        assert!(compute_theta(&world, &params).unwrap().get(0, 1));
        // The adjacent-room marginal sits near 0.982.
        params.theta_threshold = 0.99;
        assert!(!compute_theta(&world, &params).unwrap().get(0, 1));
    }

    #[test]
    fn zero_weight_knowledge_base_flags_nothing() {
        let world = with_relations(
            vec![unit(0, 0, 10, 10), unit(10, 0, 20, 10)],
            vec![UnitType::Room, UnitType::Room],
        );
        let mut params = ScoringParams::default();
        params.kb = KbWeights { room_room: 0.0, room_hall: 0.0, room_corr: 0.0, irrelevant: 0.0 };
        let theta = compute_theta(&world, &params).unwrap();
        assert!(!theta.get(0, 1));
        let pm = PairMarginals::compute(&params).unwrap();
        assert_eq!(pm.marginal(UnitType::Room, UnitType::Room, Relation::Adjacent), 0.5);
    }

    #[test]
    fn pair_marginal_table_matches_closed_forms() {
        let pm = PairMarginals::compute(&ScoringParams::default()).unwrap();
        let e4 = 4.0f64.exp();
        let e2 = 2.0f64.exp();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(
            pm.marginal(UnitType::Room, UnitType::Room, Relation::Adjacent),
            e4 / (1.0 + e4)
        ));
        assert!(close(
            pm.marginal(UnitType::Room, UnitType::Room, Relation::Irrelevant),
            1.0 / (1.0 + e4)
        ));
        assert!(close(
            pm.marginal(UnitType::Room, UnitType::Hall, Relation::Adjacent),
            1.0 / (1.0 + e2)
        ));
        assert!(close(
            pm.marginal(UnitType::Hall, UnitType::Room, Relation::Adjacent),
            1.0 / (1.0 + e2)
        ));
        assert!(close(
            pm.marginal(UnitType::Corridor, UnitType::Room, Relation::Adjacent),
            1.0 / (1.0 + e2)
        ));
        assert_eq!(pm.marginal(UnitType::Hall, UnitType::Hall, Relation::Adjacent), 0.5);
        assert_eq!(
            pm.marginal(UnitType::Corridor, UnitType::Corridor, Relation::Adjacent),
            0.5
        );
    }

    #[test]
    fn memoized_theta_matches_full_inference() {
        let units = vec![
            unit(0, 0, 10, 10),
            unit(0, 10, 20, 16),
            unit(0, 16, 10, 26),
            unit(10, 0, 20, 10),
        ];
        let types = vec![
            UnitType::Room,
            UnitType::Corridor,
            UnitType::Room,
            UnitType::Room,
        ];
        let world = with_relations(units, types);
        let params = ScoringParams::default();
        let full = compute_theta(&world, &params).unwrap();
        let pm = PairMarginals::compute(&params).unwrap();
        let fast = pm.theta(world.types(), world.relations().unwrap(), params.theta_threshold);
        assert_eq!(full, fast);
    }

    #[test]
    fn facing_walls_pick_the_shared_boundary_side() {
        // Side by side: the shared boundary runs vertically, so the heights
        // are compared, not the collinear top edges.
        let a = unit(0, 0, 10, 10);
        let b = unit(12, 0, 22, 8);
        assert_eq!(facing_wall_difference(&a, &b), 2.0);
        assert_eq!(facing_wall_difference(&b, &a), 2.0);
    }

    #[test]
    fn stacked_units_compare_widths() {
        let a = unit(0, 0, 10, 6);
        let b = unit(0, 8, 14, 14);
        assert_eq!(facing_wall_difference(&a, &b), 4.0);
    }

    #[test]
    fn prior_is_zero_without_flagged_pairs() {
        let world = world_of(
            vec![unit(0, 0, 10, 10), unit(12, 0, 22, 10)],
            vec![UnitType::Room, UnitType::Room],
        );
        let theta = ThetaMatrix::new(2);
        assert_eq!(prior_log(&world, &theta, &ScoringParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn equal_facing_walls_cost_nothing() {
        let world = world_of(
            vec![unit(0, 0, 10, 10), unit(12, 0, 22, 10)],
            vec![UnitType::Room, UnitType::Room],
        );
        let mut theta = ThetaMatrix::new(2);
        theta.set_pair(0, 1, true);
        assert_eq!(prior_log(&world, &theta, &ScoringParams::default()).unwrap(), 0.0);
    }

    // Ten cells of facing-wall difference at sigma 5 cost 0.2 per direction.
    #[test]
    fn pair_prior_counts_both_directions() {
        let world = world_of(
            vec![unit(0, 0, 10, 20), unit(12, 0, 22, 10)],
            vec![UnitType::Room, UnitType::Room],
        );
        let mut theta = ThetaMatrix::new(2);
        theta.set_pair(0, 1, true);
        let params = ScoringParams::default();
        assert_eq!(prior_log(&world, &theta, &params).unwrap(), -0.4);
        let mut squared = params.clone();
        squared.squared_distance = true;
        assert_eq!(prior_log(&world, &theta, &squared).unwrap(), -4.0);
    }

    #[test]
    fn prior_rejects_theta_of_wrong_size() {
        let world = world_of(vec![unit(0, 0, 10, 10)], vec![UnitType::Room]);
        let theta = ThetaMatrix::new(3);
        assert!(matches!(
            prior_log(&world, &theta, &ScoringParams::default()),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn posterior_combines_likelihood_and_prior() {
        let world = with_relations(
            vec![unit(2, 2, 12, 22), unit(14, 2, 24, 12)],
            vec![UnitType::Room, UnitType::Room],
        );
        let params = ScoringParams::default();
        let map = world.rasterize((30, 26), params.world.wall_thickness).unwrap();
        let score = posterior_log(&map, &world, &params).unwrap();
        let theta = compute_theta(&world, &params).unwrap();
        assert_eq!(score.log_likelihood, likelihood_log(&map, &world, &params).unwrap());
        assert_eq!(score.log_prior, prior_log(&world, &theta, &params).unwrap());
        assert_eq!(score.log_posterior, score.log_likelihood + score.log_prior);
        assert_eq!(score.per_pair_b.len(), 2);
        assert_eq!(score.per_pair_b[0].d, 10.0);
        assert_eq!(score.log_prior, -0.4);
    }

    #[test]
    fn posterior_derives_relations_when_missing() {
        // No caches at all: relations fall back to the detector.
        let world = world_of(
            vec![unit(2, 2, 12, 22), unit(14, 2, 24, 12)],
            vec![UnitType::Room, UnitType::Room],
        );
        let params = ScoringParams::default();
        let map = world.rasterize((30, 26), params.world.wall_thickness).unwrap();
        let score = posterior_log(&map, &world, &params).unwrap();
        assert_eq!(score.log_prior, -0.4);
    }

    #[test]
    fn cached_theta_overrides_derivation() {
        let mut world = with_relations(
            vec![unit(2, 2, 12, 22), unit(14, 2, 24, 12)],
            vec![UnitType::Room, UnitType::Room],
        );
        world.set_theta(ThetaMatrix::new(2)).unwrap();
        let params = ScoringParams::default();
        let map = world.rasterize((30, 26), params.world.wall_thickness).unwrap();
        let score = posterior_log(&map, &world, &params).unwrap();
        assert_eq!(score.log_prior, 0.0);
        assert!(score.per_pair_b.is_empty());
    }

    #[test]
    fn prediction_rate_counts_matching_cells() {
        let world = world_of(vec![unit(2, 2, 22, 12)], vec![UnitType::Room]);
        let params = ScoringParams::default();
        let map = world.rasterize((30, 20), params.world.wall_thickness).unwrap();
        assert_eq!(cell_prediction_rate(&map, &world, &params).unwrap(), 1.0);
        let mut noisy = map.clone();
        for x in 0..30 {
            assert_eq!(noisy.get(x, 19), CellState::Unknown);
            noisy.set(x, 19, CellState::Free);
        }
        assert_eq!(cell_prediction_rate(&noisy, &world, &params).unwrap(), 570.0 / 600.0);
    }

    #[test]
    fn relation_params_do_not_leak_into_marginals() {
        // The pair table depends on types, relations, and weights only.
        let mut a = ScoringParams::default();
        a.world.relations = RelationParams::default();
        let pm = PairMarginals::compute(&a).unwrap();
        let b = ScoringParams::default();
        let pm2 = PairMarginals::compute(&b).unwrap();
        assert_eq!(
            pm.marginal(UnitType::Room, UnitType::Room, Relation::Adjacent),
            pm2.marginal(UnitType::Room, UnitType::Room, Relation::Adjacent)
        );
    }
}
