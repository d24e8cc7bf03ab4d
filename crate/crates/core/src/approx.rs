//! Shrinking a calibrated forest to a smaller clique-size bound while keeping
//! it valid, calibrated and normalization-preserving, then turning beliefs
//! back into factors for the next build.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::calibration::{check_calibration, log_nc, tree_log_ncs, NC_TOL};
use crate::ctf::{clique_size, is_subset, CliqueId, Ctf, SIZE_EPS};
use crate::error::{IbiaError, Result};
use crate::factor::{Factor, VarId};

/// Variable selection rule for local marginalization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Heuristic {
    #[default]
    MaxMi,
    Random,
}

/// Variables shared between a forest and the factors not yet added.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InterfaceSet {
    pub ivs: BTreeSet<VarId>,
}

impl InterfaceSet {
    pub fn contains(&self, v: VarId) -> bool {
        self.ivs.contains(&v)
    }

    /// Interface variables among `vars`.
    pub fn within(&self, vars: &[VarId]) -> Vec<VarId> {
        vars.iter().copied().filter(|v| self.ivs.contains(v)).collect()
    }
}

pub fn interface_variables(ctf: &Ctf, remaining: &[Factor]) -> InterfaceSet {
    let present = ctf.vars();
    let ivs = remaining.iter().flat_map(|f| f.scope().iter().copied()).filter(|v| present.contains(v)).collect();
    InterfaceSet { ivs }
}

/// Serializes a natural-log quantity, writing `-inf` as a string.
pub fn serialize_log<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_str(if *x < 0.0 { "-inf" } else { "inf" })
    }
}

fn serialize_log_pairs<S: Serializer>(xs: &[(f64, f64)], s: S) -> std::result::Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Pair(#[serde(serialize_with = "serialize_log")] f64, #[serde(serialize_with = "serialize_log")] f64);
    s.collect_seq(xs.iter().map(|&(a, b)| Pair(a, b)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ApproxEvent {
    /// Tree without interface variables reduced to its normalization constant.
    ScalarTree { clique: CliqueId },
    /// Variable present in a single clique summed out of it.
    ExactSingle { var: VarId },
    /// Cliques holding the variable merged, then the variable summed out.
    Collapse { var: VarId, size: f64 },
    /// Variable summed out everywhere except the retained cliques.
    Local { var: VarId, retained: Vec<CliqueId> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ApproxReport {
    pub events: Vec<ApproxEvent>,
    /// Set when some clique could not be brought under the bound.
    pub best_effort: bool,
    pub max_clique_size: f64,
    /// Log normalization constant of every input tree, before and after.
    #[serde(serialize_with = "serialize_log_pairs")]
    pub nc_pairs: Vec<(f64, f64)>,
}

impl ApproxReport {
    pub fn exact_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, ApproxEvent::ExactSingle { .. } | ApproxEvent::Collapse { .. }))
            .count()
    }

    pub fn local_count(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, ApproxEvent::Local { .. })).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApproxOptions {
    pub mcs_im: f64,
    pub heuristic: Heuristic,
}

/// Mutual information (natural log) between `x` and `y` under the
/// normalized pairwise marginal of `belief`.
pub fn pairwise_mi(belief: &Factor, x: VarId, y: VarId) -> Result<f64> {
    if x == y {
        return Err(IbiaError::InvalidParameter("mutual information needs two variables".into()));
    }
    let joint = belief.marginal_onto(&[x, y])?;
    let z = joint.log_norm_constant();
    if z == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let (cx, cy) = (joint.cards()[0], joint.cards()[1]);
    let p: Vec<f64> = joint.log_values().iter().map(|l| (l - z).exp()).collect();
    let mut px = vec![0.0; cx];
    let mut py = vec![0.0; cy];
    for i in 0..cx {
        for j in 0..cy {
            px[i] += p[i * cy + j];
            py[j] += p[i * cy + j];
        }
    }
    let mut mi = 0.0;
    for i in 0..cx {
        for j in 0..cy {
            let q = p[i * cy + j];
            if q > 0.0 {
                mi += q * (q / (px[i] * py[j])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Largest mutual information between `v` and another interface variable
/// of `clique`; `-inf` when there is none.
pub fn mlmi(ctf: &Ctf, v: VarId, clique: CliqueId, iv: &InterfaceSet) -> Result<f64> {
    let c = ctf.clique(clique);
    let belief = c.belief.as_ref().ok_or_else(|| IbiaError::InvalidParameter("uncalibrated clique".into()))?;
    let mut best = f64::NEG_INFINITY;
    for x in iv.within(&c.vars) {
        if x != v {
            best = best.max(pairwise_mi(belief, v, x)?);
        }
    }
    Ok(best)
}

/// Largest `mlmi` of `v` over the cliques containing it.
pub fn max_mi(ctf: &Ctf, v: VarId, iv: &InterfaceSet) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for c in ctf.cliques_with(v) {
        best = best.max(mlmi(ctf, v, c, iv)?);
    }
    Ok(best)
}

fn belief_of(ctf: &Ctf, c: CliqueId) -> Result<&Factor> {
    ctf.clique(c).belief.as_ref().ok_or_else(|| IbiaError::InvalidParameter(format!("clique {c} has no belief")))
}

/// Folds clique `a` into its neighbour `b` (which contains it); the other
/// neighbours of `a` move to `b` with their sepsets.
fn merge_into(ctf: &mut Ctf, a: CliqueId, b: CliqueId) {
    let others: Vec<CliqueId> = ctf.neighbors(a).filter(|&n| n != b).collect();
    let moved: Vec<_> = others.into_iter().map(|n| (n, ctf.remove_edge(a, n).expect("edge"))).collect();
    ctf.remove_clique(a);
    for (n, sep) in moved {
        ctf.add_edge_with(n, b, sep.vars, sep.belief);
    }
}

/// Removes cliques contained in a neighbour until every clique is maximal.
pub fn remove_non_maximal(ctf: &mut Ctf) {
    loop {
        let found = ctf.edges().find_map(|e| {
            let (va, vb) = (&ctf.clique(e.a).vars, &ctf.clique(e.b).vars);
            if is_subset(vb, va) {
                Some((e.b, e.a))
            } else if is_subset(va, vb) {
                Some((e.a, e.b))
            } else {
                None
            }
        });
        match found {
            Some((a, b)) => merge_into(ctf, a, b),
            None => break,
        }
    }
}

fn drop_var(vars: &mut Vec<VarId>, v: VarId) {
    vars.retain(|&x| x != v);
}

/// Sums `v` out of the forest exactly. A variable held by one clique is
/// summed out of it; otherwise its cliques are first merged, which happens
/// only when the merged clique fits within `mcs_im`. Returns `None` when
/// skipped.
pub fn exact_marginalize(ctf: &mut Ctf, v: VarId, mcs_im: f64) -> Result<Option<ApproxEvent>> {
    let holders = ctf.cliques_with(v);
    match holders.len() {
        0 => Err(IbiaError::UnknownVariable(v)),
        1 => {
            let c = holders[0];
            let b = belief_of(ctf, c)?.marginalize(v)?;
            let clique = ctf.clique_mut(c);
            clique.belief = Some(b);
            drop_var(&mut clique.vars, v);
            remove_non_maximal(ctf);
            Ok(Some(ApproxEvent::ExactSingle { var: v }))
        }
        _ => {
            let union: BTreeSet<VarId> = holders.iter().flat_map(|&c| ctf.clique(c).vars.iter().copied()).collect();
            let union: Vec<VarId> = union.into_iter().collect();
            let size = clique_size(&union, ctf.cards())?;
            if size > mcs_im + SIZE_EPS {
                return Ok(None);
            }
            let set: BTreeSet<CliqueId> = holders.iter().copied().collect();
            let mut joint = Factor::scalar(0.0);
            for &c in &holders {
                joint = joint.product(belief_of(ctf, c)?)?;
            }
            for (a, b) in ctf.induced_edges(&set) {
                let mu = ctf
                    .edge(a, b)
                    .and_then(|e| e.belief.as_ref())
                    .ok_or_else(|| IbiaError::InvalidParameter(format!("edge {a}-{b} has no belief")))?;
                joint = joint.divide(mu)?;
            }
            let mut vars = union;
            drop_var(&mut vars, v);
            let belief = joint.marginalize(v)?.reordered(&vars)?;
            let mut external = Vec::new();
            for &c in &holders {
                for n in ctf.neighbors(c) {
                    if !set.contains(&n) {
                        external.push((n, ctf.edge(c, n).expect("edge").clone()));
                    }
                }
            }
            for &c in &holders {
                ctf.remove_clique(c);
            }
            let k = ctf.add_clique(vars);
            ctf.clique_mut(k).belief = Some(belief);
            for (n, sep) in external {
                ctf.add_edge_with(n, k, sep.vars, sep.belief);
            }
            remove_non_maximal(ctf);
            Ok(Some(ApproxEvent::Collapse { var: v, size }))
        }
    }
}

/// Connected components of `set` within the forest, each sorted.
fn components_within(ctf: &Ctf, set: &BTreeSet<CliqueId>) -> Vec<BTreeSet<CliqueId>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &s in set {
        if !seen.insert(s) {
            continue;
        }
        let mut comp = BTreeSet::from([s]);
        let mut queue = VecDeque::from([s]);
        while let Some(c) = queue.pop_front() {
            for n in ctf.neighbors(c) {
                if set.contains(&n) && seen.insert(n) {
                    comp.insert(n);
                    queue.push_back(n);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Whether removing `v` outside `retain` keeps every sepset non-empty.
fn keeps_connected(ctf: &Ctf, v: VarId, holders: &BTreeSet<CliqueId>, retain: &BTreeSet<CliqueId>) -> bool {
    ctf.induced_edges(holders)
        .into_iter()
        .all(|(a, b)| (retain.contains(&a) && retain.contains(&b)) || ctf.edge(a, b).expect("edge").vars != [v])
}

/// Admissible retained subtrees for locally marginalizing `v`: maximal
/// connected groups of its cliques that fit within `mcs_im` and whose
/// complement can drop `v` without disconnecting the tree. An interface
/// variable must be retained somewhere; any other variable may be dropped
/// entirely (the empty set) when no subtree qualifies.
pub fn retain_options(ctf: &Ctf, v: VarId, mcs_im: f64, is_iv: bool) -> Vec<BTreeSet<CliqueId>> {
    let holders: BTreeSet<CliqueId> = ctf.cliques_with(v).into_iter().collect();
    let fitting: BTreeSet<CliqueId> =
        holders.iter().copied().filter(|&c| ctf.size_of(c) <= mcs_im + SIZE_EPS).collect();
    let options: Vec<BTreeSet<CliqueId>> =
        components_within(ctf, &fitting).into_iter().filter(|r| keeps_connected(ctf, v, &holders, r)).collect();
    if options.is_empty() && !is_iv && keeps_connected(ctf, v, &holders, &BTreeSet::new()) {
        return vec![BTreeSet::new()];
    }
    options
}

/// Sums `v` out of every clique and sepset outside `retain`.
pub fn local_marginalize(ctf: &mut Ctf, v: VarId, retain: &BTreeSet<CliqueId>) -> Result<()> {
    let holders: BTreeSet<CliqueId> = ctf.cliques_with(v).into_iter().collect();
    if !retain.is_subset(&holders) {
        return Err(IbiaError::InvalidParameter(format!("retained cliques must all hold variable {v}")));
    }
    if !keeps_connected(ctf, v, &holders, retain) {
        return Err(IbiaError::Infeasible(format!("dropping variable {v} would disconnect a tree")));
    }
    for (a, b) in ctf.induced_edges(&holders) {
        if retain.contains(&a) && retain.contains(&b) {
            continue;
        }
        let sep = ctf.edge_mut(a, b).expect("edge");
        if let Some(mu) = sep.belief.take() {
            sep.belief = Some(mu.marginalize(v)?);
        }
        drop_var(&mut sep.vars, v);
    }
    for &c in holders.difference(retain) {
        let clique = ctf.clique_mut(c);
        if let Some(b) = clique.belief.take() {
            clique.belief = Some(b.marginalize(v)?);
        }
        drop_var(&mut clique.vars, v);
    }
    remove_non_maximal(ctf);
    Ok(())
}

fn pick_retain(ctf: &Ctf, v: VarId, options: Vec<BTreeSet<CliqueId>>, iv: &InterfaceSet) -> Result<BTreeSet<CliqueId>> {
    let mut best: Option<(f64, usize, CliqueId, BTreeSet<CliqueId>)> = None;
    for r in options {
        let mut score = f64::NEG_INFINITY;
        for &c in &r {
            score = score.max(mlmi(ctf, v, c, iv)?);
        }
        let low = r.iter().next().copied().unwrap_or(CliqueId::MAX);
        let better = match &best {
            None => true,
            Some((s, n, l, _)) => score > *s || (score == *s && (r.len() > *n || (r.len() == *n && low < *l))),
        };
        if better {
            best = Some((score, r.len(), low, r));
        }
    }
    Ok(best.map(|b| b.3).unwrap_or_default())
}

/// One local-marginalization step on the largest reducible over-size clique.
/// Returns `false` when no over-size clique admits a legal step.
fn local_step(
    ctf: &mut Ctf,
    iv: &InterfaceSet,
    opts: &ApproxOptions,
    rng: &mut ChaCha8Rng,
    events: &mut Vec<ApproxEvent>,
) -> Result<bool> {
    let mut over: Vec<(f64, CliqueId)> = ctf
        .clique_ids()
        .into_iter()
        .map(|c| (ctf.size_of(c), c))
        .filter(|&(s, _)| s > opts.mcs_im + SIZE_EPS)
        .collect();
    over.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, c) in over {
        let vars = ctf.clique(c).vars.clone();
        let mut legal: Vec<(bool, VarId, Vec<BTreeSet<CliqueId>>)> = Vec::new();
        for &v in &vars {
            let options = retain_options(ctf, v, opts.mcs_im, iv.contains(v));
            if !options.is_empty() {
                legal.push((iv.contains(v), v, options));
            }
        }
        if legal.is_empty() {
            continue;
        }
        let pool: Vec<_> =
            if legal.iter().any(|l| !l.0) { legal.into_iter().filter(|l| !l.0).collect() } else { legal };
        let chosen = match opts.heuristic {
            Heuristic::Random => {
                let i = rng.random_range(0..pool.len());
                pool.into_iter().nth(i).expect("index in range")
            }
            Heuristic::MaxMi => {
                let mut scored = Vec::with_capacity(pool.len());
                for l in pool {
                    scored.push((max_mi(ctf, l.1, iv)?, l));
                }
                scored
                    .into_iter()
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1 .1.cmp(&b.1 .1)))
                    .expect("non-empty pool")
                    .1
            }
        };
        let (_, v, options) = chosen;
        let retain = pick_retain(ctf, v, options, iv)?;
        local_marginalize(ctf, v, &retain)?;
        events.push(ApproxEvent::Local { var: v, retained: retain.into_iter().collect() });
        return Ok(true);
    }
    Ok(false)
}

/// Runs exact marginalization of non-interface variables until nothing
/// more applies: single-clique variables first, then the smallest merges.
fn exact_fixpoint(ctf: &mut Ctf, iv: &InterfaceSet, mcs_im: f64, events: &mut Vec<ApproxEvent>) -> Result<()> {
    loop {
        let mut holders: BTreeMap<VarId, Vec<CliqueId>> = BTreeMap::new();
        for c in ctf.cliques() {
            for &v in &c.vars {
                if !iv.contains(v) {
                    holders.entry(v).or_default().push(c.id);
                }
            }
        }
        if let Some((&v, _)) = holders.iter().find(|(_, cs)| cs.len() == 1) {
            let e = exact_marginalize(ctf, v, mcs_im)?.expect("single-clique step always applies");
            events.push(e);
            continue;
        }
        let mut best: Option<(f64, VarId)> = None;
        for (&v, cs) in &holders {
            let union: BTreeSet<VarId> = cs.iter().flat_map(|&c| ctf.clique(c).vars.iter().copied()).collect();
            let union: Vec<VarId> = union.into_iter().collect();
            let size = clique_size(&union, ctf.cards())?;
            if size <= mcs_im + SIZE_EPS && best.is_none_or(|(s, _)| size < s) {
                best = Some((size, v));
            }
        }
        let Some((_, v)) = best else { return Ok(()) };
        let e = exact_marginalize(ctf, v, mcs_im)?.expect("size checked");
        events.push(e);
    }
}

/// Approximates a calibrated forest for the factors in `remaining`: keeps
/// the minimal subgraph over the interface variables, removes other
/// variables exactly where affordable, then locally marginalizes until
/// every clique fits within `mcs_im` (or nothing legal remains).
pub fn approximate_ctf(
    ctf: &Ctf,
    remaining: &[Factor],
    opts: &ApproxOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(Ctf, ApproxReport)> {
    if !ctf.calibrated {
        return Err(IbiaError::InvalidParameter("approximation needs a calibrated forest".into()));
    }
    let iv = interface_variables(ctf, remaining);
    let trees = ctf.trees();
    let before = match &ctf.tree_log_nc {
        Some(ncs) if ncs.len() == trees.len() => ncs.clone(),
        _ => tree_log_ncs(ctf)?,
    };
    let keep = if iv.ivs.is_empty() { BTreeSet::new() } else { ctf.msg(&iv.ivs)? };
    let mut out = ctf.extract(&keep);
    let mut events = Vec::new();
    // Each input tree is tracked through one of its interface variables, or
    // through the scalar clique standing in for it.
    enum Anchor {
        Var(VarId),
        Clique(CliqueId),
    }
    let mut anchors = Vec::with_capacity(trees.len());
    for (tree, &nc) in trees.iter().zip(&before) {
        let first_iv = tree.iter().flat_map(|&c| iv.within(&ctf.clique(c).vars)).min();
        match first_iv {
            Some(v) => anchors.push(Anchor::Var(v)),
            None => {
                let id = out.add_clique(Vec::new());
                out.clique_mut(id).belief = Some(Factor::scalar(nc));
                events.push(ApproxEvent::ScalarTree { clique: id });
                anchors.push(Anchor::Clique(id));
            }
        }
    }
    exact_fixpoint(&mut out, &iv, opts.mcs_im, &mut events)?;
    let mut best_effort = false;
    loop {
        if out.max_clique_size() <= opts.mcs_im + SIZE_EPS {
            break;
        }
        if !local_step(&mut out, &iv, opts, rng, &mut events)? {
            best_effort = true;
            break;
        }
    }
    let out_trees = out.trees();
    let tree_of = |c: CliqueId| out_trees.iter().position(|t| t.binary_search(&c).is_ok()).expect("clique in a tree");
    let mut nc_pairs = Vec::with_capacity(anchors.len());
    for (a, &nc) in anchors.iter().zip(&before) {
        let c = match *a {
            Anchor::Var(v) => *out
                .cliques_with(v)
                .first()
                .ok_or_else(|| IbiaError::Internal(format!("interface variable {v} lost during approximation")))?,
            Anchor::Clique(c) => c,
        };
        nc_pairs.push((nc, log_nc(&out, &out_trees[tree_of(c)])?));
    }
    out.calibrated = true;
    out.tree_log_nc = Some(tree_log_ncs(&out)?);
    let report = ApproxReport { events, best_effort, max_clique_size: out.max_clique_size(), nc_pairs };
    Ok((out, report))
}

/// Checks that an approximated forest is valid, calibrated within `tol`, and
/// kept every tree's normalization constant.
pub fn check_approximation(ctf: &Ctf, report: &ApproxReport, tol: f64) -> Result<()> {
    let validity = ctf.validate();
    if !validity.is_valid() {
        return Err(IbiaError::Internal(format!("approximate forest invalid: {:?}", validity.violations)));
    }
    let cal = check_calibration(ctf)?;
    if !cal.within(tol) {
        return Err(IbiaError::Internal(format!("approximate forest off calibration by {}", cal.max_discrepancy)));
    }
    for &(a, b) in &report.nc_pairs {
        let same =
            if a.is_finite() && b.is_finite() { (a - b).abs() <= NC_TOL.max(tol) * a.abs().max(1.0) } else { a == b };
        if !same {
            return Err(IbiaError::Internal(format!("tree normalization changed from {a} to {b}")));
        }
    }
    Ok(())
}

/// Replaces assigned factors by the tree's beliefs: the root (lowest id)
/// gets its belief, every other clique its belief divided by the sepset
/// towards the root. Beliefs are dropped afterwards.
pub fn reparameterize(ctf: &mut Ctf) -> Result<()> {
    let mut assigned = Vec::new();
    for tree in ctf.trees() {
        let root = tree[0];
        assigned.push((root, belief_of(ctf, root)?.clone()));
        let mut seen = BTreeSet::from([root]);
        let mut stack = vec![root];
        while let Some(p) = stack.pop() {
            let children: Vec<CliqueId> = ctf.neighbors(p).filter(|n| !seen.contains(n)).collect();
            for c in children.into_iter().rev() {
                seen.insert(c);
                let mu = ctf
                    .edge(c, p)
                    .and_then(|e| e.belief.as_ref())
                    .ok_or_else(|| IbiaError::InvalidParameter(format!("edge {c}-{p} has no belief")))?;
                assigned.push((c, belief_of(ctf, c)?.divide(mu)?));
                stack.push(c);
            }
        }
    }
    ctf.clear_factors();
    for (c, f) in assigned {
        ctf.assign_factor(c, f);
    }
    ctf.clear_beliefs();
    Ok(())
}
