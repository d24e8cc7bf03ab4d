//! Clique tree forests: cliques joined by sepset-labelled edges, with a
//! factor arena, optional calibrated beliefs, and structural checkers.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use crate::error::{IbiaError, Result};
use crate::factor::{Factor, VarId};

pub type CliqueId = usize;

/// Size comparisons against a bound use this slack.
pub const SIZE_EPS: f64 = 1e-9;

/// `log2` of the number of joint states of `vars`.
pub fn clique_size(vars: &[VarId], cards: &[usize]) -> Result<f64> {
    vars.iter().map(|&v| cards.get(v).map(|&c| (c as f64).log2()).ok_or(IbiaError::UnknownVariable(v))).sum()
}

/// Sorted intersection of two sorted slices.
pub fn intersect(a: &[VarId], b: &[VarId]) -> Vec<VarId> {
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Whether sorted `a` is a subset of sorted `b`.
pub fn is_subset(a: &[VarId], b: &[VarId]) -> bool {
    let mut j = 0;
    for &x in a {
        while j < b.len() && b[j] < x {
            j += 1;
        }
        if j == b.len() || b[j] != x {
            return false;
        }
        j += 1;
    }
    true
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clique {
    pub id: CliqueId,
    /// Sorted, duplicate-free.
    pub vars: Vec<VarId>,
    pub factors: Vec<usize>,
    pub belief: Option<Factor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sepset {
    pub a: CliqueId,
    pub b: CliqueId,
    pub vars: Vec<VarId>,
    pub belief: Option<Factor>,
}

fn key(a: CliqueId, b: CliqueId) -> (CliqueId, CliqueId) {
    (a.min(b), a.max(b))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ctf {
    cards: Vec<usize>,
    cliques: BTreeMap<CliqueId, Clique>,
    adj: BTreeMap<CliqueId, BTreeSet<CliqueId>>,
    edges: BTreeMap<(CliqueId, CliqueId), Sepset>,
    next_id: CliqueId,
    /// Factors owned by this forest; cliques refer to them by index.
    pub factors: Vec<Factor>,
    pub calibrated: bool,
    /// Natural-log normalization constant per tree, in `trees()` order.
    /// Present only after calibration.
    pub tree_log_nc: Option<Vec<f64>>,
}

impl Ctf {
    pub fn new(cards: Vec<usize>) -> Self {
        Self { cards, ..Self::default() }
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn num_cliques(&self) -> usize {
        self.cliques.len()
    }

    pub fn cliques(&self) -> impl Iterator<Item = &Clique> {
        self.cliques.values()
    }

    pub fn clique_ids(&self) -> Vec<CliqueId> {
        self.cliques.keys().copied().collect()
    }

    pub fn clique(&self, id: CliqueId) -> &Clique {
        &self.cliques[&id]
    }

    pub fn clique_mut(&mut self, id: CliqueId) -> &mut Clique {
        self.cliques.get_mut(&id).expect("clique id")
    }

    pub fn has_clique(&self, id: CliqueId) -> bool {
        self.cliques.contains_key(&id)
    }

    pub fn edges(&self) -> impl Iterator<Item = &Sepset> {
        self.edges.values()
    }

    pub fn edge(&self, a: CliqueId, b: CliqueId) -> Option<&Sepset> {
        self.edges.get(&key(a, b))
    }

    pub fn edge_mut(&mut self, a: CliqueId, b: CliqueId) -> Option<&mut Sepset> {
        self.edges.get_mut(&key(a, b))
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, id: CliqueId) -> impl Iterator<Item = CliqueId> + '_ {
        self.adj.get(&id).into_iter().flatten().copied()
    }

    pub fn degree(&self, id: CliqueId) -> usize {
        self.adj.get(&id).map_or(0, BTreeSet::len)
    }

    pub fn size_of(&self, id: CliqueId) -> f64 {
        clique_size(&self.cliques[&id].vars, &self.cards).expect("clique vars are declared")
    }

    pub fn max_clique_size(&self) -> f64 {
        self.cliques.keys().map(|&id| self.size_of(id)).fold(0.0, f64::max)
    }

    /// Adds a clique over `vars` (sorted internally) and returns its id.
    pub fn add_clique(&mut self, mut vars: Vec<VarId>) -> CliqueId {
        vars.sort_unstable();
        vars.dedup();
        let id = self.next_id;
        self.next_id += 1;
        self.cliques.insert(id, Clique { id, vars, factors: Vec::new(), belief: None });
        self.adj.insert(id, BTreeSet::new());
        id
    }

    /// Removes a clique and its incident edges, returning it.
    pub fn remove_clique(&mut self, id: CliqueId) -> Clique {
        let nbrs: Vec<CliqueId> = self.neighbors(id).collect();
        for n in nbrs {
            self.remove_edge(id, n);
        }
        self.adj.remove(&id);
        self.cliques.remove(&id).expect("clique id")
    }

    /// Joins two cliques; the sepset is their intersection.
    pub fn add_edge(&mut self, a: CliqueId, b: CliqueId) {
        let vars = intersect(&self.cliques[&a].vars, &self.cliques[&b].vars);
        self.add_edge_with(a, b, vars, None);
    }

    pub fn add_edge_with(&mut self, a: CliqueId, b: CliqueId, vars: Vec<VarId>, belief: Option<Factor>) {
        let (a, b) = key(a, b);
        self.adj.entry(a).or_default().insert(b);
        self.adj.entry(b).or_default().insert(a);
        self.edges.insert((a, b), Sepset { a, b, vars, belief });
    }

    pub fn remove_edge(&mut self, a: CliqueId, b: CliqueId) -> Option<Sepset> {
        if let Some(s) = self.adj.get_mut(&a) {
            s.remove(&b);
        }
        if let Some(s) = self.adj.get_mut(&b) {
            s.remove(&a);
        }
        self.edges.remove(&key(a, b))
    }

    /// Adds a factor to the arena and assigns it to `clique`.
    pub fn assign_factor(&mut self, clique: CliqueId, factor: Factor) -> usize {
        let idx = self.factors.len();
        self.factors.push(factor);
        self.clique_mut(clique).factors.push(idx);
        idx
    }

    /// Drops every clique and sepset belief.
    pub fn clear_beliefs(&mut self) {
        for c in self.cliques.values_mut() {
            c.belief = None;
        }
        for e in self.edges.values_mut() {
            e.belief = None;
        }
        self.calibrated = false;
        self.tree_log_nc = None;
    }

    /// Empties the factor arena and all assignments.
    pub fn clear_factors(&mut self) {
        self.factors.clear();
        for c in self.cliques.values_mut() {
            c.factors.clear();
        }
    }

    /// All variables appearing in some clique.
    pub fn vars(&self) -> BTreeSet<VarId> {
        self.cliques.values().flat_map(|c| c.vars.iter().copied()).collect()
    }

    /// Cliques containing `var`, in id order.
    pub fn cliques_with(&self, var: VarId) -> Vec<CliqueId> {
        self.cliques.values().filter(|c| c.vars.binary_search(&var).is_ok()).map(|c| c.id).collect()
    }

    /// Connected components of the clique graph, each sorted, ordered by
    /// smallest clique id.
    pub fn trees(&self) -> Vec<Vec<CliqueId>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for &start in self.cliques.keys() {
            if !seen.insert(start) {
                continue;
            }
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(c) = queue.pop_front() {
                for n in self.neighbors(c) {
                    if seen.insert(n) {
                        comp.push(n);
                        queue.push_back(n);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn num_trees(&self) -> usize {
        self.trees().len()
    }

    /// Edges with both endpoints in `set`.
    pub fn induced_edges(&self, set: &BTreeSet<CliqueId>) -> Vec<(CliqueId, CliqueId)> {
        self.edges.keys().filter(|(a, b)| set.contains(a) && set.contains(b)).copied().collect()
    }

    /// Copy of the sub-forest induced by `set`, keeping ids, beliefs and
    /// sepset beliefs. Factor assignments are dropped.
    pub fn extract(&self, set: &BTreeSet<CliqueId>) -> Ctf {
        let mut out = Ctf::new(self.cards.clone());
        out.next_id = self.next_id;
        for &id in set {
            let mut c = self.cliques[&id].clone();
            c.factors.clear();
            out.cliques.insert(id, c);
            out.adj.insert(id, BTreeSet::new());
        }
        for (a, b) in self.induced_edges(set) {
            let e = &self.edges[&(a, b)];
            out.add_edge_with(a, b, e.vars.clone(), e.belief.clone());
        }
        out.calibrated = self.calibrated;
        out
    }

    /// Minimal sub-forest needed for the joint beliefs of `vars`: per tree,
    /// the subtree spanning cliques that contain some of `vars`, with leaves
    /// whose `vars`-content is covered by their neighbour pruned repeatedly
    /// (highest clique id first).
    pub fn msg(&self, vars: &BTreeSet<VarId>) -> Result<BTreeSet<CliqueId>> {
        let present = self.vars();
        if let Some(&v) = vars.iter().find(|v| !present.contains(v)) {
            return Err(IbiaError::UnknownVariable(v));
        }
        let content: BTreeMap<CliqueId, Vec<VarId>> = self
            .cliques
            .values()
            .map(|c| (c.id, c.vars.iter().copied().filter(|v| vars.contains(v)).collect()))
            .collect();
        let mut keep = BTreeSet::new();
        for tree in self.trees() {
            if tree.iter().all(|id| content[id].is_empty()) {
                continue;
            }
            let mut alive: BTreeSet<CliqueId> = tree.into_iter().collect();
            let mut degree: BTreeMap<CliqueId, usize> = alive.iter().map(|&c| (c, self.degree(c))).collect();
            loop {
                let prunable = alive.iter().rev().copied().find(|&c| {
                    if degree[&c] != 1 {
                        return false;
                    }
                    let n = self.neighbors(c).find(|n| alive.contains(n)).expect("degree one");
                    is_subset(&content[&c], &content[&n])
                });
                let Some(c) = prunable else { break };
                alive.remove(&c);
                for n in self.neighbors(c) {
                    if let Some(d) = degree.get_mut(&n) {
                        *d -= 1;
                    }
                }
            }
            keep.extend(alive);
        }
        Ok(keep)
    }

    /// Checks forest shape, per-tree maximality, running intersection,
    /// sepset labels and factor coverage, listing every violation.
    pub fn validate(&self) -> ValidityReport {
        let mut report = ValidityReport {
            is_forest: true,
            maximal: true,
            rip: true,
            sepsets: true,
            coverage: true,
            violations: Vec::new(),
        };
        let trees = self.trees();
        let mut edges_seen = 0;
        for tree in &trees {
            let set: BTreeSet<CliqueId> = tree.iter().copied().collect();
            let n_edges = self.induced_edges(&set).len();
            edges_seen += n_edges;
            if n_edges + 1 != tree.len() {
                report.is_forest = false;
                report.violations.push(Violation::Cycle { tree: tree.clone() });
            }
            for &a in tree {
                for &b in tree {
                    if a == b {
                        continue;
                    }
                    let (va, vb) = (&self.cliques[&a].vars, &self.cliques[&b].vars);
                    if is_subset(va, vb) && (va != vb || a > b) {
                        report.maximal = false;
                        report.violations.push(Violation::NonMaximal { clique: a, container: b });
                    }
                }
            }
            let vars: BTreeSet<VarId> = tree.iter().flat_map(|c| self.cliques[c].vars.iter().copied()).collect();
            for v in vars {
                let holders: BTreeSet<CliqueId> =
                    tree.iter().copied().filter(|c| self.cliques[c].vars.binary_search(&v).is_ok()).collect();
                if !self.connected_within(&holders) {
                    report.rip = false;
                    report.violations.push(Violation::Rip { var: v });
                }
            }
        }
        debug_assert_eq!(edges_seen, self.edges.len());
        for e in self.edges.values() {
            let expect = intersect(&self.cliques[&e.a].vars, &self.cliques[&e.b].vars);
            if expect != e.vars {
                report.sepsets = false;
                report.violations.push(Violation::Sepset { a: e.a, b: e.b });
            }
        }
        let mut owners = vec![Vec::new(); self.factors.len()];
        for c in self.cliques.values() {
            for &f in &c.factors {
                match owners.get_mut(f) {
                    Some(o) => o.push(c.id),
                    None => {
                        report.coverage = false;
                        report.violations.push(Violation::UnknownFactor { clique: c.id, factor: f });
                    }
                }
                if let Some(factor) = self.factors.get(f) {
                    let mut scope = factor.scope().to_vec();
                    scope.sort_unstable();
                    if !is_subset(&scope, &c.vars) {
                        report.coverage = false;
                        report.violations.push(Violation::FactorOutsideClique { clique: c.id, factor: f });
                    }
                }
            }
        }
        for (f, o) in owners.iter().enumerate() {
            if o.len() != 1 {
                report.coverage = false;
                report.violations.push(Violation::FactorAssignment { factor: f, cliques: o.clone() });
            }
        }
        report
    }

    fn connected_within(&self, set: &BTreeSet<CliqueId>) -> bool {
        let Some(&start) = set.iter().next() else { return true };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(c) = queue.pop_front() {
            for n in self.neighbors(c) {
                if set.contains(&n) && seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        seen.len() == set.len()
    }

    /// `∏ β(C) / ∏ μ(S)` over one calibrated tree, as a single table.
    pub fn joint_distribution(&self, tree: &[CliqueId], cap: u64) -> Result<Factor> {
        let vars: BTreeSet<VarId> = tree.iter().flat_map(|c| self.cliques[c].vars.iter().copied()).collect();
        let states: f64 = vars.iter().map(|&v| self.cards[v] as f64).product();
        if states > cap as f64 {
            return Err(IbiaError::CapExceeded { states, cap });
        }
        let missing = || IbiaError::InvalidParameter("joint needs calibrated beliefs".into());
        let mut joint = Factor::scalar(0.0);
        for c in tree {
            joint = joint.product(self.cliques[c].belief.as_ref().ok_or_else(missing)?)?;
        }
        let set: BTreeSet<CliqueId> = tree.iter().copied().collect();
        for k in self.induced_edges(&set) {
            joint = joint.divide(self.edges[&k].belief.as_ref().ok_or_else(missing)?)?;
        }
        let sorted: Vec<VarId> = vars.into_iter().collect();
        joint.reordered(&sorted)
    }

    /// Graphviz rendering: cliques as nodes, sepsets as edge labels.
    pub fn to_dot(&self) -> String {
        let fmt = |vs: &[VarId]| vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        let mut out = String::from("graph ctf {\n");
        for c in self.cliques.values() {
            let _ = writeln!(out, "  c{} [label=\"C{}: {{{}}}\"];", c.id, c.id, fmt(&c.vars));
        }
        for e in self.edges.values() {
            let _ = writeln!(out, "  c{} -- c{} [label=\"{{{}}}\"];", e.a, e.b, fmt(&e.vars));
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Cycle { tree: Vec<CliqueId> },
    NonMaximal { clique: CliqueId, container: CliqueId },
    Rip { var: VarId },
    Sepset { a: CliqueId, b: CliqueId },
    UnknownFactor { clique: CliqueId, factor: usize },
    FactorOutsideClique { clique: CliqueId, factor: usize },
    FactorAssignment { factor: usize, cliques: Vec<CliqueId> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidityReport {
    pub is_forest: bool,
    pub maximal: bool,
    pub rip: bool,
    pub sepsets: bool,
    pub coverage: bool,
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.is_forest && self.maximal && self.rip && self.sepsets && self.coverage
    }
}
