//! Incremental construction of a clique tree forest under a clique-size
//! bound. New factors are added in groups; only the part of the forest they
//! touch is re-triangulated and spliced back.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::ctf::{clique_size, is_subset, CliqueId, Ctf, SIZE_EPS};
use crate::error::{IbiaError, Result};
use crate::factor::{Factor, VarId};
use crate::triangulation::{build_elimination_graph, compile};

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BuildStats {
    pub factors_added: usize,
    pub direct_assignments: usize,
    pub retriangulations: usize,
    pub evictions: usize,
    pub retained_cliques: usize,
    pub max_elimination_set: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildOutcome {
    pub deferred: Vec<Factor>,
    pub stats: BuildStats,
}

fn sorted_scope(f: &Factor) -> Vec<VarId> {
    let mut s = f.scope().to_vec();
    s.sort_unstable();
    s
}

/// Smallest clique (then lowest id) whose variables include `scope`.
pub fn containing_clique(ctf: &Ctf, scope: &[VarId]) -> Option<CliqueId> {
    ctf.cliques().filter(|c| is_subset(scope, &c.vars)).min_by_key(|c| (c.vars.len(), c.id)).map(|c| c.id)
}

/// Partitions `pending` into groups of factors that share a variable of
/// `ctf` and whose minimal subgraphs share an edge, transitively. Groups are
/// listed by first appearance.
pub fn group_factors(pending: &[Factor], ctf: &Ctf) -> Result<Vec<Vec<usize>>> {
    let present = ctf.vars();
    let mut touching: BTreeMap<(CliqueId, CliqueId), Vec<usize>> = BTreeMap::new();
    let mut insides = Vec::with_capacity(pending.len());
    let mut parent: Vec<usize> = (0..pending.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, f) in pending.iter().enumerate() {
        let inside: BTreeSet<VarId> = f.scope().iter().copied().filter(|v| present.contains(v)).collect();
        if !inside.is_empty() {
            for e in ctf.induced_edges(&ctf.msg(&inside)?) {
                touching.entry(e).or_default().push(i);
            }
        }
        insides.push(inside);
    }
    for members in touching.values() {
        let mut first_with: BTreeMap<VarId, usize> = BTreeMap::new();
        for &i in members {
            for &v in &insides[i] {
                let j = *first_with.entry(v).or_insert(i);
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                // Keep the earliest member as the root.
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..pending.len() {
        let r = find(&mut parent, i);
        let g = *slot.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    Ok(groups)
}

/// A node of the new subtree: either a fresh clique or a retained one.
#[derive(Clone, Debug, PartialEq)]
pub struct SubtreeNode {
    pub vars: Vec<VarId>,
    pub retained: Option<CliqueId>,
}

/// Replacement for the minimal subgraph touched by a group of factors.
#[derive(Clone, Debug, PartialEq)]
pub struct Subtree {
    pub sg_min: BTreeSet<CliqueId>,
    pub elimination_set: BTreeSet<VarId>,
    pub nodes: Vec<SubtreeNode>,
    pub edges: Vec<(usize, usize)>,
    /// Arena factors of removed cliques and the node that now holds them.
    pub moved_factors: Vec<(usize, usize)>,
    /// Node for each factor of the group, in group order.
    pub group_homes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SubtreeResult {
    Fits(Subtree),
    BoundViolation { size: f64 },
}

fn smallest_node_containing(nodes: &[SubtreeNode], scope: &[VarId]) -> Option<usize> {
    (0..nodes.len()).filter(|&i| is_subset(scope, &nodes[i].vars)).min_by_key(|&i| (nodes[i].vars.len(), i))
}

/// Re-triangulates the part of `ctf` affected by `group`.
pub fn construct_subtree(ctf: &Ctf, group: &[&Factor], mcs_p: f64) -> Result<SubtreeResult> {
    let present = ctf.vars();
    let scopes: Vec<Vec<VarId>> = group.iter().map(|f| sorted_scope(f)).collect();
    let inside: BTreeSet<VarId> = scopes.iter().flatten().copied().filter(|v| present.contains(v)).collect();
    let sg_min = if inside.is_empty() { BTreeSet::new() } else { ctf.msg(&inside)? };
    let scope_refs: Vec<&[VarId]> = scopes.iter().map(Vec::as_slice).collect();
    let eg = build_elimination_graph(ctf, &sg_min, &scope_refs);
    let forest = compile(&eg.graph);
    for c in &forest.cliques {
        let size = clique_size(c, ctf.cards())?;
        if size > mcs_p + SIZE_EPS {
            return Ok(SubtreeResult::BoundViolation { size });
        }
    }
    let mut nodes: Vec<SubtreeNode> =
        forest.cliques.iter().map(|c| SubtreeNode { vars: c.clone(), retained: None }).collect();
    let mut edges = forest.edges.clone();
    for &r in &eg.retained {
        let vars = &ctf.clique(r).vars;
        let key: Vec<VarId> = vars.iter().copied().filter(|v| eg.elimination_set.contains(v)).collect();
        let host = smallest_node_containing(&nodes, &key)
            .ok_or_else(|| IbiaError::Internal(format!("no clique of the new subtree holds retained clique {r}")))?;
        if nodes[host].retained.is_none() && is_subset(&nodes[host].vars, vars) {
            nodes[host] = SubtreeNode { vars: vars.clone(), retained: Some(r) };
        } else {
            nodes.push(SubtreeNode { vars: vars.clone(), retained: Some(r) });
            edges.push((host, nodes.len() - 1));
        }
    }
    let mut moved_factors = Vec::new();
    for &c in &sg_min {
        if eg.retained.contains(&c) {
            continue;
        }
        for &fi in &ctf.clique(c).factors {
            let scope = sorted_scope(&ctf.factors[fi]);
            let home = smallest_node_containing(&nodes, &scope)
                .ok_or_else(|| IbiaError::Internal(format!("factor {fi} has no home in the new subtree")))?;
            moved_factors.push((fi, home));
        }
    }
    let group_homes = scopes
        .iter()
        .map(|s| {
            smallest_node_containing(&nodes, s)
                .ok_or_else(|| IbiaError::Internal("new factor has no home in the new subtree".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SubtreeResult::Fits(Subtree {
        sg_min,
        elimination_set: eg.elimination_set,
        nodes,
        edges,
        moved_factors,
        group_homes,
    }))
}

/// Replaces the minimal subgraph by the new subtree and reconnects the rest
/// of the forest. Returns the clique id of every node.
pub fn splice(ctf: &mut Ctf, st: &Subtree, group: Vec<Factor>) -> Result<Vec<CliqueId>> {
    let retained: BTreeSet<CliqueId> = st.nodes.iter().filter_map(|n| n.retained).collect();
    let mut external = Vec::new();
    for &c in &st.sg_min {
        if retained.contains(&c) {
            continue;
        }
        for n in ctf.neighbors(c) {
            if !st.sg_min.contains(&n) {
                external.push((n, ctf.edge(c, n).expect("edge").vars.clone()));
            }
        }
    }
    for (a, b) in ctf.induced_edges(&st.sg_min) {
        ctf.remove_edge(a, b);
    }
    for &c in &st.sg_min {
        if !retained.contains(&c) {
            ctf.remove_clique(c);
        }
    }
    let ids: Vec<CliqueId> =
        st.nodes.iter().map(|n| n.retained.unwrap_or_else(|| ctf.add_clique(n.vars.clone()))).collect();
    for &(a, b) in &st.edges {
        ctf.add_edge(ids[a], ids[b]);
    }
    for &(fi, home) in &st.moved_factors {
        ctf.clique_mut(ids[home]).factors.push(fi);
    }
    for (f, &home) in group.into_iter().zip(&st.group_homes) {
        ctf.assign_factor(ids[home], f);
    }
    for (a, sep) in external {
        let home = smallest_node_containing(&st.nodes, &sep)
            .ok_or_else(|| IbiaError::Internal(format!("clique {a} cannot be reconnected to the new subtree")))?;
        ctf.add_edge(a, ids[home]);
    }
    ctf.clear_beliefs();
    Ok(ids)
}

/// Adds as many of `pending` as fit under `mcs_p`, in order. Factors that
/// cannot be added are returned as deferred.
pub fn build_ctf(ctf: &mut Ctf, pending: Vec<Factor>, mcs_p: f64) -> Result<BuildOutcome> {
    for f in &pending {
        let size = clique_size(f.scope(), ctf.cards())?;
        if size > mcs_p + SIZE_EPS {
            return Err(IbiaError::BoundTooSmall { bound: mcs_p, size });
        }
    }
    let mut stats = BuildStats::default();
    let mut pending = pending;
    let mut deferred = Vec::new();
    loop {
        let mut rest = Vec::with_capacity(pending.len());
        for f in pending {
            match containing_clique(ctf, &sorted_scope(&f)) {
                Some(c) => {
                    ctf.assign_factor(c, f);
                    stats.direct_assignments += 1;
                    stats.factors_added += 1;
                }
                None => rest.push(f),
            }
        }
        pending = rest;
        if pending.is_empty() {
            break;
        }
        let mut group = group_factors(&pending, ctf)?.swap_remove(0);
        let mut evicted = Vec::new();
        let mut fitted = None;
        while !group.is_empty() {
            let members: Vec<&Factor> = group.iter().map(|&i| &pending[i]).collect();
            match construct_subtree(ctf, &members, mcs_p)? {
                SubtreeResult::Fits(st) => {
                    fitted = Some(st);
                    break;
                }
                SubtreeResult::BoundViolation { .. } => {
                    // Largest scope goes first; ties evict the later factor.
                    let mut worst = 0;
                    let mut worst_size = f64::NEG_INFINITY;
                    for (k, &i) in group.iter().enumerate() {
                        let size = clique_size(pending[i].scope(), ctf.cards())?;
                        if size >= worst_size - SIZE_EPS {
                            worst = k;
                            worst_size = size;
                        }
                    }
                    evicted.push(group.remove(worst));
                    stats.evictions += 1;
                }
            }
        }
        let mut slots: Vec<Option<Factor>> = pending.into_iter().map(Some).collect();
        for &i in &evicted {
            deferred.push(slots[i].take().expect("group member"));
        }
        if let Some(st) = fitted {
            stats.retriangulations += 1;
            stats.retained_cliques += st.nodes.iter().filter(|n| n.retained.is_some()).count();
            stats.max_elimination_set = stats.max_elimination_set.max(st.elimination_set.len());
            stats.factors_added += group.len();
            let taken = group.iter().map(|&i| slots[i].take().expect("group member")).collect();
            splice(ctf, &st, taken)?;
        }
        pending = slots.into_iter().flatten().collect();
    }
    Ok(BuildOutcome { deferred, stats })
}

/// Forest whose cliques are a maximal set of pairwise disjoint factor
/// scopes, taken greedily in order. Returns the forest and the factors left.
pub fn initial_ctf(cards: Vec<usize>, factors: Vec<Factor>) -> (Ctf, Vec<Factor>) {
    let mut ctf = Ctf::new(cards);
    let mut used = BTreeSet::new();
    let mut rest = Vec::new();
    for f in factors {
        if !f.scope().is_empty() && f.scope().iter().all(|v| !used.contains(v)) {
            used.extend(f.scope().iter().copied());
            let c = ctf.add_clique(f.scope().to_vec());
            ctf.assign_factor(c, f);
        } else {
            rest.push(f);
        }
    }
    (ctf, rest)
}
