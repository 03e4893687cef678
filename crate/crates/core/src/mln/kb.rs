//! The built-in same-wall-length knowledge base.
//!
//! Eight formulas over six predicates: unit types Room/Corr/Hall, pairwise
//! relations Adj/Irr as evidence, and the queried SaLe ("same length")
//! relation. Four hard rules fix symmetry and relation exclusivity; four
//! soft rules push adjacent rooms toward equal facing-wall lengths and
//! everything else away from it.

use crate::mln::parse::KnowledgeBase;
use crate::mln::{parse_kb, PredicateDecl, PredicateKind};

/// Soft-rule weights. Higher pushes the corresponding marginal harder
/// toward its preferred value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KbWeights {
    /// Adjacent rooms have same-length facing walls.
    pub room_room: f64,
    /// A room adjacent to a hall does not.
    pub room_hall: f64,
    /// A room adjacent to a corridor does not.
    pub room_corr: f64,
    /// Irrelevant pairs do not.
    pub irrelevant: f64,
}

impl Default for KbWeights {
    fn default() -> KbWeights {
        KbWeights { room_room: 2.0, room_hall: 2.0, room_corr: 2.0, irrelevant: 2.0 }
    }
}

/// Declarations for the built-in predicates, in canonical order.
pub fn kb_predicates() -> Vec<PredicateDecl> {
    vec![
        PredicateDecl::new("Room", 1, PredicateKind::Evidence),
        PredicateDecl::new("Corr", 1, PredicateKind::Evidence),
        PredicateDecl::new("Hall", 1, PredicateKind::Evidence),
        PredicateDecl::new("Adj", 2, PredicateKind::Evidence),
        PredicateDecl::new("Irr", 2, PredicateKind::Evidence),
        PredicateDecl::new("SaLe", 2, PredicateKind::Query),
    ]
}

/// The same-length knowledge base with default weights.
pub fn kb_same_length() -> KnowledgeBase {
    kb_same_length_weighted(&KbWeights::default())
}

/// The same-length knowledge base with explicit soft weights.
pub fn kb_same_length_weighted(w: &KbWeights) -> KnowledgeBase {
    let text = format!(
        "inf | Irr(p,q) -> Irr(q,p)\n\
         inf | Adj(p,q) -> Adj(q,p)\n\
         inf | SaLe(p,q) -> SaLe(q,p)\n\
         inf | Irr(p,q) -> !Adj(p,q)\n\
         {} | Room(p) & Room(q) & Adj(p,q) -> SaLe(p,q)\n\
         {} | Room(p) & Hall(q) & Adj(p,q) -> !SaLe(p,q)\n\
         {} | Room(p) & Corr(q) & Adj(p,q) -> !SaLe(p,q)\n\
         {} | Irr(q,p) -> !SaLe(p,q)\n",
        fmt_weight(w.room_room),
        fmt_weight(w.room_hall),
        fmt_weight(w.room_corr),
        fmt_weight(w.irrelevant),
    );
    let mut kb = parse_kb(&text).expect("built-in knowledge base parses");
    // The parser only declares predicates it saw; pin the full canonical set
    // so grounding covers every SaLe atom even if a weight is zeroed.
    kb.predicates = kb_predicates();
    kb
}

/// Formats a weight so that parsing it back yields the identical f64.
fn fmt_weight(w: f64) -> String {
    format!("{w:?}")
}
