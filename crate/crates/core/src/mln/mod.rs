//! A minimal Markov Logic Network engine.
//!
//! A knowledge base is a set of weighted quantifier-free formulas over
//! predicate atoms (conjunction, negation, implication). Grounding a base
//! against a constant set and closed-world evidence produces a network of
//! residual ground formulas over the free query atoms; exact inference
//! enumerates each independent component and reports query marginals.
//!
//! Hard formulas (infinite weight) are constraints: assignments violating
//! one carry zero probability mass. Soft formulas multiply mass by
//! `exp(weight)` when satisfied.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::exec;

mod kb;
mod parse;

pub use kb::{kb_predicates, kb_same_length, kb_same_length_weighted, KbWeights};
pub use parse::parse_kb;

/// Argument of a predicate atom: a variable bound at grounding time, or a
/// fixed constant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Var(String),
    Const(String),
}

/// Quantifier-free formula tree. Variables are implicitly universally
/// quantified over the constant set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Clause {
    Atom { pred: String, args: Vec<Term> },
    Not(Box<Clause>),
    And(Box<Clause>, Box<Clause>),
    Implies(Box<Clause>, Box<Clause>),
}

impl Clause {
    pub fn atom(pred: &str, args: &[Term]) -> Clause {
        Clause::Atom { pred: pred.to_string(), args: args.to_vec() }
    }

    pub fn not(c: Clause) -> Clause {
        Clause::Not(Box::new(c))
    }

    pub fn and(a: Clause, b: Clause) -> Clause {
        Clause::And(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Clause, b: Clause) -> Clause {
        Clause::Implies(Box::new(a), Box::new(b))
    }

    fn visit_atoms<'a>(&'a self, f: &mut impl FnMut(&'a str, &'a [Term])) {
        match self {
            Clause::Atom { pred, args } => f(pred, args),
            Clause::Not(c) => c.visit_atoms(f),
            Clause::And(a, b) | Clause::Implies(a, b) => {
                a.visit_atoms(f);
                b.visit_atoms(f);
            }
        }
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Clause::Atom { pred, args } => {
                write!(f, "{pred}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    match a {
                        Term::Var(v) => write!(f, "{v}")?,
                        Term::Const(c) => write!(f, "{c}")?,
                    }
                }
                write!(f, ")")
            }
            Clause::Not(c) => write!(f, "!{c}"),
            Clause::And(a, b) => write!(f, "({a} & {b})"),
            Clause::Implies(a, b) => write!(f, "({a} -> {b})"),
        }
    }
}

/// Formula weight: hard formulas are inviolable constraints, soft formulas
/// carry a finite log-linear weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    Hard,
    Soft(f64),
}

impl Weight {
    pub fn is_hard(&self) -> bool {
        matches!(self, Weight::Hard)
    }
}

/// A weighted formula of the knowledge base.
#[derive(Debug, Clone, PartialEq)]
pub struct Formula {
    pub weight: Weight,
    pub clause: Clause,
}

/// Whether a predicate is fixed by evidence (closed world: unlisted ground
/// atoms are false) or queried (free unless pinned by evidence).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredicateKind {
    Evidence,
    Query,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateDecl {
    pub name: String,
    pub arity: usize,
    pub kind: PredicateKind,
}

impl PredicateDecl {
    pub fn new(name: &str, arity: usize, kind: PredicateKind) -> PredicateDecl {
        PredicateDecl { name: name.to_string(), arity, kind }
    }
}

/// A predicate applied to constants.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroundAtom {
    pub pred: String,
    pub args: Vec<String>,
}

impl GroundAtom {
    pub fn new(pred: &str, args: &[&str]) -> GroundAtom {
        GroundAtom { pred: pred.to_string(), args: args.iter().map(|s| s.to_string()).collect() }
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.pred, self.args.join(","))
    }
}

/// Truth assignment over ground atoms, together with the predicate
/// declarations that fix each predicate's arity and kind.
///
/// Evidence-kind predicates are closed-world: a ground atom not asserted
/// true is false. Query-kind predicates are open; asserting one here pins
/// it and removes it from the free atoms.
#[derive(Debug, Clone)]
pub struct Evidence {
    decls: Vec<PredicateDecl>,
    truth: BTreeMap<GroundAtom, bool>,
}

impl Evidence {
    pub fn new(decls: Vec<PredicateDecl>) -> Evidence {
        Evidence { decls, truth: BTreeMap::new() }
    }

    pub fn decls(&self) -> &[PredicateDecl] {
        &self.decls
    }

    fn decl(&self, name: &str) -> Option<&PredicateDecl> {
        self.decls.iter().find(|d| d.name == name)
    }

    /// Asserts a ground atom's truth value.
    pub fn assert(&mut self, pred: &str, args: &[&str], value: bool) -> Result<()> {
        let decl = self
            .decl(pred)
            .ok_or_else(|| Error::Config(format!("undeclared predicate {pred}")))?;
        if decl.arity != args.len() {
            return Err(Error::Config(format!(
                "predicate {pred} has arity {}, got {} arguments",
                decl.arity,
                args.len()
            )));
        }
        self.truth.insert(GroundAtom::new(pred, args), value);
        Ok(())
    }

    /// Truth value of a ground atom under this evidence, or None for a free
    /// query atom.
    fn lookup(&self, atom: &GroundAtom, kind: PredicateKind) -> Option<bool> {
        match self.truth.get(atom) {
            Some(&v) => Some(v),
            None => match kind {
                PredicateKind::Evidence => Some(false),
                PredicateKind::Query => None,
            },
        }
    }
}

/// Residual formula tree over free-atom indices.
#[derive(Debug, Clone, PartialEq)]
enum Node {
    Atom(u32),
    Not(Box<Node>),
    And(Box<Node>, Box<Node>),
    Implies(Box<Node>, Box<Node>),
}

impl Node {
    fn holds(&self, assignment: &[bool]) -> bool {
        match self {
            Node::Atom(i) => assignment[*i as usize],
            Node::Not(c) => !c.holds(assignment),
            Node::And(a, b) => a.holds(assignment) && b.holds(assignment),
            Node::Implies(a, b) => !a.holds(assignment) || b.holds(assignment),
        }
    }

    fn collect_atoms(&self, out: &mut Vec<u32>) {
        match self {
            Node::Atom(i) => out.push(*i),
            Node::Not(c) => c.collect_atoms(out),
            Node::And(a, b) | Node::Implies(a, b) => {
                a.collect_atoms(out);
                b.collect_atoms(out);
            }
        }
    }
}

/// A ground formula whose truth still depends on free atoms.
#[derive(Debug, Clone)]
pub struct GroundFormula {
    weight: Weight,
    node: Node,
    atoms: Vec<u32>,
}

impl GroundFormula {
    pub fn weight(&self) -> Weight {
        self.weight
    }

    /// Indices into [`GroundNetwork::atoms`] this formula references.
    pub fn atoms(&self) -> &[u32] {
        &self.atoms
    }
}

/// The grounded network: free atoms, residual ground formulas, and the
/// independence partition.
#[derive(Debug, Clone)]
pub struct GroundNetwork {
    atoms: Vec<GroundAtom>,
    ground_formulas: Vec<GroundFormula>,
    components: Vec<Component>,
}

#[derive(Debug, Clone)]
struct Component {
    atoms: Vec<u32>,
    formulas: Vec<u32>,
}

impl GroundNetwork {
    pub fn atoms(&self) -> &[GroundAtom] {
        &self.atoms
    }

    pub fn ground_formulas(&self) -> &[GroundFormula] {
        &self.ground_formulas
    }

    /// Free-atom indices per independent component, each sorted ascending;
    /// components ordered by their smallest atom index.
    pub fn components(&self) -> Vec<Vec<u32>> {
        self.components.iter().map(|c| c.atoms.clone()).collect()
    }
}

/// Marginal probabilities for every free query atom, plus the log partition
/// function of the residual network (summed over components).
#[derive(Debug, Clone)]
pub struct QueryResult {
    pub marginals: BTreeMap<GroundAtom, f64>,
    pub log_partition: f64,
}

impl QueryResult {
    pub fn marginal(&self, pred: &str, args: &[&str]) -> Option<f64> {
        self.marginals.get(&GroundAtom::new(pred, args)).copied()
    }
}

/// Three-valued evaluation result during grounding.
enum Partial {
    True,
    False,
    Open(Node),
}

fn simplify(
    clause: &Clause,
    binding: &BTreeMap<&str, &str>,
    evidence: &Evidence,
    atom_index: &BTreeMap<GroundAtom, u32>,
) -> Result<Partial> {
    Ok(match clause {
        Clause::Atom { pred, args } => {
            let decl = evidence
                .decl(pred)
                .ok_or_else(|| Error::Config(format!("undeclared predicate {pred}")))?;
            if decl.arity != args.len() {
                return Err(Error::Config(format!(
                    "predicate {pred} has arity {}, used with {} arguments",
                    decl.arity,
                    args.len()
                )));
            }
            let mut ground_args = Vec::with_capacity(args.len());
            for term in args {
                match term {
                    Term::Const(c) => ground_args.push(c.clone()),
                    Term::Var(v) => {
                        let c = binding.get(v.as_str()).ok_or_else(|| {
                            Error::Config(format!("unbound variable {v} in {pred}"))
                        })?;
                        ground_args.push((*c).to_string());
                    }
                }
            }
            let atom = GroundAtom { pred: pred.clone(), args: ground_args };
            match evidence.lookup(&atom, decl.kind) {
                Some(true) => Partial::True,
                Some(false) => Partial::False,
                None => {
                    let idx = atom_index.get(&atom).ok_or_else(|| {
                        Error::Config(format!("atom {atom} uses a constant outside the domain"))
                    })?;
                    Partial::Open(Node::Atom(*idx))
                }
            }
        }
        Clause::Not(c) => match simplify(c, binding, evidence, atom_index)? {
            Partial::True => Partial::False,
            Partial::False => Partial::True,
            Partial::Open(n) => Partial::Open(Node::Not(Box::new(n))),
        },
        Clause::And(a, b) => {
            let a = simplify(a, binding, evidence, atom_index)?;
            let b = simplify(b, binding, evidence, atom_index)?;
            match (a, b) {
                (Partial::False, _) | (_, Partial::False) => Partial::False,
                (Partial::True, other) | (other, Partial::True) => other,
                (Partial::Open(x), Partial::Open(y)) => {
                    Partial::Open(Node::And(Box::new(x), Box::new(y)))
                }
            }
        }
        Clause::Implies(a, b) => {
            let a = simplify(a, binding, evidence, atom_index)?;
            let b = simplify(b, binding, evidence, atom_index)?;
            match (a, b) {
                (Partial::False, _) => Partial::True,
                (Partial::True, other) => other,
                (_, Partial::True) => Partial::True,
                (Partial::Open(x), Partial::False) => Partial::Open(Node::Not(Box::new(x))),
                (Partial::Open(x), Partial::Open(y)) => {
                    Partial::Open(Node::Implies(Box::new(x), Box::new(y)))
                }
            }
        }
    })
}

/// Distinct variables of a clause, in first-occurrence order.
fn clause_variables(clause: &Clause) -> Vec<String> {
    let mut vars: Vec<String> = Vec::new();
    clause.visit_atoms(&mut |_, args| {
        for t in args {
            if let Term::Var(v) = t {
                if !vars.iter().any(|x| x == v) {
                    vars.push(v.clone());
                }
            }
        }
    });
    vars
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new(n: usize) -> DisjointSet {
        DisjointSet { parent: (0..n as u32).collect() }
    }

    fn find(&mut self, x: u32) -> u32 {
        let p = self.parent[x as usize];
        if p == x {
            return x;
        }
        let root = self.find(p);
        self.parent[x as usize] = root;
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Attach the larger root to the smaller so component roots are
            // the smallest member index.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Grounds the formulas against a constant set and evidence.
///
/// Free atoms are every grounding of a query predicate not pinned by the
/// evidence. Ground formulas fully determined by the evidence are dropped;
/// a hard formula determined false is an inconsistent-evidence error.
pub fn ground(formulas: &[Formula], constants: &[&str], evidence: &Evidence) -> Result<GroundNetwork> {
    for decl in evidence.decls() {
        if decl.arity == 0 || decl.arity > 2 {
            return Err(Error::Config(format!(
                "predicate {} has unsupported arity {}",
                decl.name, decl.arity
            )));
        }
        if evidence.decls().iter().filter(|d| d.name == decl.name).count() > 1 {
            return Err(Error::Config(format!("duplicate predicate declaration {}", decl.name)));
        }
    }
    for (atom, _) in &evidence.truth {
        for arg in &atom.args {
            if !constants.iter().any(|c| c == arg) {
                return Err(Error::Config(format!(
                    "evidence atom {atom} uses a constant outside the domain"
                )));
            }
        }
    }
    for f in formulas {
        if let Weight::Soft(w) = f.weight {
            if !w.is_finite() {
                return Err(Error::Config(format!(
                    "non-finite soft weight on formula {}",
                    f.clause
                )));
            }
        }
    }

    // Free atoms: all groundings of query predicates, minus pinned ones,
    // in declaration order then row-major argument order.
    let mut atoms: Vec<GroundAtom> = Vec::new();
    for decl in evidence.decls() {
        if decl.kind != PredicateKind::Query {
            continue;
        }
        let mut tuple = vec![0usize; decl.arity];
        loop {
            let args: Vec<String> = tuple.iter().map(|&i| constants[i].to_string()).collect();
            let atom = GroundAtom { pred: decl.name.clone(), args };
            if !evidence.truth.contains_key(&atom) {
                atoms.push(atom);
            }
            // Advance the tuple odometer.
            let mut pos = decl.arity;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                tuple[pos] += 1;
                if tuple[pos] < constants.len() {
                    break;
                }
                tuple[pos] = 0;
            }
            if tuple.iter().all(|&i| i == 0) {
                break;
            }
        }
        if constants.is_empty() {
            break;
        }
    }
    let atom_index: BTreeMap<GroundAtom, u32> =
        atoms.iter().enumerate().map(|(i, a)| (a.clone(), i as u32)).collect();

    let mut ground_formulas: Vec<GroundFormula> = Vec::new();
    for formula in formulas {
        let vars = clause_variables(&formula.clause);
        if !vars.is_empty() && constants.is_empty() {
            continue;
        }
        let mut assignment = vec![0usize; vars.len()];
        loop {
            let binding: BTreeMap<&str, &str> = vars
                .iter()
                .zip(assignment.iter())
                .map(|(v, &i)| (v.as_str(), constants[i]))
                .collect();
            match simplify(&formula.clause, &binding, evidence, &atom_index)? {
                Partial::True => {}
                Partial::False => {
                    if formula.weight.is_hard() {
                        return Err(Error::InconsistentEvidence(format!(
                            "hard formula {} violated by evidence under binding {:?}",
                            formula.clause, binding
                        )));
                    }
                }
                Partial::Open(node) => {
                    let mut atom_refs = Vec::new();
                    node.collect_atoms(&mut atom_refs);
                    atom_refs.sort_unstable();
                    atom_refs.dedup();
                    ground_formulas.push(GroundFormula {
                        weight: formula.weight,
                        node,
                        atoms: atom_refs,
                    });
                }
            }
            if vars.is_empty() {
                break;
            }
            let mut pos = vars.len();
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                assignment[pos] += 1;
                if assignment[pos] < constants.len() {
                    break;
                }
                assignment[pos] = 0;
            }
            if assignment.iter().all(|&i| i == 0) {
                break;
            }
        }
    }

    // Connected components of the free-atom / formula incidence graph.
    let mut sets = DisjointSet::new(atoms.len());
    for gf in &ground_formulas {
        for w in gf.atoms.windows(2) {
            sets.union(w[0], w[1]);
        }
    }
    let mut by_root: BTreeMap<u32, Component> = BTreeMap::new();
    for i in 0..atoms.len() as u32 {
        let root = sets.find(i);
        by_root.entry(root).or_insert_with(|| Component { atoms: Vec::new(), formulas: Vec::new() }).atoms.push(i);
    }
    for (fi, gf) in ground_formulas.iter().enumerate() {
        let root = sets.find(gf.atoms[0]);
        by_root.get_mut(&root).expect("formula atom in some component").formulas.push(fi as u32);
    }
    let components: Vec<Component> = by_root.into_values().collect();

    Ok(GroundNetwork { atoms, ground_formulas, components })
}

/// Exact inference by per-component enumeration.
///
/// Components larger than `max_enum_atoms` are a capacity error. A component
/// whose every assignment violates a hard constraint has zero probability
/// mass, reported as inconsistent evidence.
pub fn infer_exact(network: &GroundNetwork, max_enum_atoms: usize) -> Result<QueryResult> {
    for c in &network.components {
        if c.atoms.len() > max_enum_atoms {
            return Err(Error::Capacity(format!(
                "component with {} free atoms exceeds max_enum_atoms = {}",
                c.atoms.len(),
                max_enum_atoms
            )));
        }
    }

    let per_component: Vec<Result<(Vec<(u32, f64)>, f64)>> =
        exec::map_indexed(network.components.len(), |ci| {
            let comp = &network.components[ci];
            let k = comp.atoms.len();
            let mut assignment = vec![false; network.atoms.len()];
            let mut mass = 0.0f64;
            let mut true_mass = vec![0.0f64; k];
            for bits in 0u64..(1u64 << k) {
                for (j, &atom) in comp.atoms.iter().enumerate() {
                    assignment[atom as usize] = bitset(bits, j);
                }
                let mut log_w = 0.0f64;
                let mut violated = false;
                for &fi in &comp.formulas {
                    let gf = &network.ground_formulas[fi as usize];
                    let sat = gf.node.holds(&assignment);
                    match gf.weight {
                        Weight::Hard => {
                            if !sat {
                                violated = true;
                                break;
                            }
                        }
                        Weight::Soft(w) => {
                            if sat {
                                log_w += w;
                            }
                        }
                    }
                }
                if violated {
                    continue;
                }
                let w = log_w.exp();
                mass += w;
                for j in 0..k {
                    if bitset(bits, j) {
                        true_mass[j] += w;
                    }
                }
            }
            if mass <= 0.0 {
                return Err(Error::InconsistentEvidence(format!(
                    "zero probability mass: hard constraints exclude every assignment of a {}-atom component",
                    k
                )));
            }
            let marginals: Vec<(u32, f64)> = comp
                .atoms
                .iter()
                .enumerate()
                .map(|(j, &atom)| (atom, true_mass[j] / mass))
                .collect();
            Ok((marginals, mass.ln()))
        });

    let mut marginals = BTreeMap::new();
    let mut log_partition = 0.0f64;
    for res in per_component {
        let (margs, log_z) = res?;
        for (atom, p) in margs {
            marginals.insert(network.atoms[atom as usize].clone(), p);
        }
        log_partition += log_z;
    }
    Ok(QueryResult { marginals, log_partition })
}

fn bitset(bits: u64, j: usize) -> bool {
    (bits >> j) & 1 == 1
}
