//! Min-fill elimination orders and clique trees from undirected graphs.

use std::collections::{BTreeMap, BTreeSet};

use crate::ctf::{intersect, is_subset, CliqueId, Ctf};
use crate::factor::{Factor, VarId};

/// Simple undirected graph over variable ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UGraph {
    adj: BTreeMap<VarId, BTreeSet<VarId>>,
}

impl UGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, v: VarId) {
        self.adj.entry(v).or_default();
    }

    pub fn add_edge(&mut self, a: VarId, b: VarId) {
        if a == b {
            self.add_node(a);
            return;
        }
        self.adj.entry(a).or_default().insert(b);
        self.adj.entry(b).or_default().insert(a);
    }

    /// Connects every pair in `vars`.
    pub fn add_clique(&mut self, vars: &[VarId]) {
        for (i, &a) in vars.iter().enumerate() {
            self.add_node(a);
            for &b in &vars[i + 1..] {
                self.add_edge(a, b);
            }
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = VarId> + '_ {
        self.adj.keys().copied()
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, v: VarId) -> impl Iterator<Item = VarId> + '_ {
        self.adj.get(&v).into_iter().flatten().copied()
    }

    pub fn has_edge(&self, a: VarId, b: VarId) -> bool {
        self.adj.get(&a).is_some_and(|s| s.contains(&b))
    }

    pub fn num_edges(&self) -> usize {
        self.adj.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn edges(&self) -> Vec<(VarId, VarId)> {
        self.adj.iter().flat_map(|(&a, s)| s.iter().filter(move |&&b| a < b).map(move |&b| (a, b))).collect()
    }

    fn fill_of(&self, v: VarId) -> usize {
        let n: Vec<VarId> = self.neighbors(v).collect();
        let mut fill = 0;
        for (i, &a) in n.iter().enumerate() {
            for &b in &n[i + 1..] {
                if !self.has_edge(a, b) {
                    fill += 1;
                }
            }
        }
        fill
    }

    /// Removes `v`, first connecting all its neighbours. Returns the fill
    /// edges added.
    pub fn eliminate(&mut self, v: VarId) -> Vec<(VarId, VarId)> {
        let n: Vec<VarId> = self.neighbors(v).collect();
        let mut fill = Vec::new();
        for (i, &a) in n.iter().enumerate() {
            for &b in &n[i + 1..] {
                if !self.has_edge(a, b) {
                    self.add_edge(a, b);
                    fill.push((a, b));
                }
            }
        }
        for &a in &n {
            self.adj.get_mut(&a).expect("neighbour").remove(&v);
        }
        self.adj.remove(&v);
        fill
    }
}

/// Graph with a clique over every factor scope.
pub fn induced_graph(factors: &[Factor]) -> UGraph {
    let mut g = UGraph::new();
    for f in factors {
        g.add_clique(f.scope());
    }
    g
}

/// Greedy min-fill order, ties broken by fewest neighbours then lowest id.
/// Fill counts are updated incrementally after each elimination.
pub fn min_fill_order(g: &UGraph) -> Vec<VarId> {
    let mut g = g.clone();
    let mut fill: BTreeMap<VarId, usize> = g.nodes().map(|v| (v, g.fill_of(v))).collect();
    let mut queue: BTreeSet<(usize, usize, VarId)> = g.nodes().map(|v| (fill[&v], g.neighbors(v).count(), v)).collect();
    let mut order = Vec::with_capacity(fill.len());
    while let Some((_, _, x)) = queue.pop_first() {
        order.push(x);
        let nbrs: Vec<VarId> = g.neighbors(x).collect();
        for &n in &nbrs {
            queue.remove(&(fill[&n], g.neighbors(n).count(), n));
        }
        let added = g.eliminate(x);
        fill.remove(&x);
        let touched: BTreeSet<VarId> = nbrs.iter().copied().collect();
        // A fill edge (a, b) completes one missing pair for every other
        // common neighbour of a and b.
        for &(a, b) in &added {
            let common: Vec<VarId> =
                g.neighbors(a).filter(|&w| w != b && !touched.contains(&w) && g.has_edge(w, b)).collect();
            for w in common {
                let deg = g.neighbors(w).count();
                let f = fill.get_mut(&w).expect("live node");
                queue.remove(&(*f, deg, w));
                *f -= 1;
                queue.insert((*f, deg, w));
            }
        }
        for &n in &nbrs {
            let f = g.fill_of(n);
            fill.insert(n, f);
            queue.insert((f, g.neighbors(n).count(), n));
        }
    }
    order
}

/// Number of fill edges `order` adds to `g`.
pub fn fill_count(g: &UGraph, order: &[VarId]) -> usize {
    let mut g = g.clone();
    order.iter().map(|&v| g.eliminate(v).len()).sum()
}

/// Cliques and tree edges produced by eliminating a graph.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CliqueForest {
    /// Each sorted.
    pub cliques: Vec<Vec<VarId>>,
    pub edges: Vec<(usize, usize)>,
}

impl CliqueForest {
    /// Largest clique size under `cards`.
    pub fn max_size(&self, cards: &[usize]) -> f64 {
        self.cliques.iter().map(|c| c.iter().map(|&v| (cards[v] as f64).log2()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Materializes the forest as a `Ctf` with no factors.
    pub fn to_ctf(&self, cards: Vec<usize>) -> (Ctf, Vec<CliqueId>) {
        let mut ctf = Ctf::new(cards);
        let ids: Vec<CliqueId> = self.cliques.iter().map(|c| ctf.add_clique(c.clone())).collect();
        for &(a, b) in &self.edges {
            ctf.add_edge(ids[a], ids[b]);
        }
        (ctf, ids)
    }
}

/// Eliminates `g` in `order` and joins the maximal elimination cliques into
/// one tree per connected component.
pub fn eliminate_to_ct(g: &UGraph, order: &[VarId]) -> CliqueForest {
    let pos: BTreeMap<VarId, usize> = order.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut work = g.clone();
    let mut cliques: Vec<Vec<VarId>> = Vec::with_capacity(order.len());
    let mut owner: BTreeMap<VarId, usize> = BTreeMap::new();
    let mut parent_var: Vec<Option<VarId>> = Vec::with_capacity(order.len());
    for &x in order {
        let mut k: Vec<VarId> = work.neighbors(x).collect();
        parent_var.push(k.iter().copied().min_by_key(|v| pos[v]));
        k.push(x);
        k.sort_unstable();
        owner.insert(x, cliques.len());
        cliques.push(k);
        work.eliminate(x);
    }
    let n = cliques.len();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (i, p) in parent_var.iter().enumerate() {
        if let Some(y) = p {
            let j = owner[y];
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    // Contract adjacent pairs where one clique contains the other.
    let mut alive = vec![true; n];
    loop {
        let mut found = None;
        'scan: for a in 0..n {
            if !alive[a] {
                continue;
            }
            for &b in &adj[a] {
                if is_subset(&cliques[a], &cliques[b]) {
                    found = Some((a, b));
                    break 'scan;
                }
            }
        }
        let Some((a, b)) = found else { break };
        alive[a] = false;
        let others: Vec<usize> = adj[a].iter().copied().filter(|&o| o != b).collect();
        adj[a].clear();
        adj[b].remove(&a);
        for o in others {
            adj[o].remove(&a);
            adj[o].insert(b);
            adj[b].insert(o);
        }
    }
    let mut index = vec![usize::MAX; n];
    let mut out = CliqueForest::default();
    for i in 0..n {
        if alive[i] {
            index[i] = out.cliques.len();
            out.cliques.push(cliques[i].clone());
        }
    }
    for i in 0..n {
        for &j in &adj[i] {
            if alive[i] && i < j {
                out.edges.push((index[i], index[j]));
            }
        }
    }
    debug_assert!(out.edges.iter().all(|&(a, b)| !intersect(&out.cliques[a], &out.cliques[b]).is_empty()));
    out
}

/// Min-fill order followed by clique-tree assembly.
pub fn compile(g: &UGraph) -> CliqueForest {
    eliminate_to_ct(g, &min_fill_order(g))
}

/// Elimination set, elimination graph and retained cliques for adding
/// factors with `scopes` over the sub-forest `sg_min` of `ctf`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EliminationGraph {
    pub graph: UGraph,
    pub elimination_set: BTreeSet<VarId>,
    pub retained: Vec<CliqueId>,
}

pub fn build_elimination_graph(ctf: &Ctf, sg_min: &BTreeSet<CliqueId>, scopes: &[&[VarId]]) -> EliminationGraph {
    let mut s_e: BTreeSet<VarId> = scopes.iter().flat_map(|s| s.iter().copied()).collect();
    for (a, b) in ctf.induced_edges(sg_min) {
        s_e.extend(ctf.edge(a, b).expect("edge").vars.iter().copied());
    }
    let mut graph = UGraph::new();
    for s in scopes {
        graph.add_clique(s);
    }
    let mut retained = Vec::new();
    for &c in sg_min {
        let vars = &ctf.clique(c).vars;
        let inside: Vec<VarId> = vars.iter().copied().filter(|v| s_e.contains(v)).collect();
        if inside.len() < vars.len() {
            retained.push(c);
        }
        graph.add_clique(&inside);
    }
    EliminationGraph { graph, elimination_set: s_e, retained }
}
