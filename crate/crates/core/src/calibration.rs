//! Two-pass exact message passing over each clique tree, normalization
//! constants and calibration checks.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::ctf::{CliqueId, Ctf};
use crate::error::{IbiaError, Result};
use crate::factor::Factor;

/// Agreement required between clique normalization constants, in log space.
pub const NC_TOL: f64 = 1e-9;

/// Product of the factors assigned to `clique`, over its sorted variables.
pub fn initial_potential(ctf: &Ctf, clique: CliqueId) -> Result<Factor> {
    let c = ctf.clique(clique);
    let cards = c.vars.iter().map(|&v| ctf.cards()[v]).collect();
    let mut psi = Factor::ones(c.vars.clone(), cards);
    for &fi in &c.factors {
        psi = psi.product(&ctf.factors[fi])?;
    }
    Ok(psi)
}

/// Breadth-first order from `root` with each clique's parent.
fn rooted_order(ctf: &Ctf, root: CliqueId) -> Vec<(CliqueId, Option<CliqueId>)> {
    let mut order = vec![(root, None)];
    let mut seen = BTreeSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(c) = queue.pop_front() {
        for n in ctf.neighbors(c) {
            if seen.insert(n) {
                order.push((n, Some(c)));
                queue.push_back(n);
            }
        }
    }
    order
}

/// Calibrates every tree from the assigned factors. Each tree is rooted at
/// its lowest clique id.
pub fn calibrate(ctf: &mut Ctf) -> Result<()> {
    let mut ncs = Vec::new();
    for tree in ctf.trees() {
        let order = rooted_order(ctf, tree[0]);
        let mut beta: BTreeMap<CliqueId, Factor> = BTreeMap::new();
        for &(c, _) in &order {
            beta.insert(c, initial_potential(ctf, c)?);
        }
        let mut up: BTreeMap<CliqueId, Factor> = BTreeMap::new();
        for &(c, parent) in order.iter().rev() {
            if let Some(p) = parent {
                let sep = &ctf.edge(c, p).expect("tree edge").vars;
                let msg = beta[&c].marginal_onto(sep)?;
                let bp = beta[&p].product(&msg)?;
                beta.insert(p, bp);
                up.insert(c, msg);
            }
        }
        for &(c, parent) in &order {
            if let Some(p) = parent {
                let sep = ctf.edge(c, p).expect("tree edge").vars.clone();
                let mu = beta[&p].marginal_onto(&sep)?;
                let down = mu.divide(&up[&c])?;
                let bc = beta[&c].product(&down)?;
                beta.insert(c, bc);
                ctf.edge_mut(c, p).expect("tree edge").belief = Some(mu);
            }
        }
        ncs.push(beta[&tree[0]].log_norm_constant());
        for (c, b) in beta {
            ctf.clique_mut(c).belief = Some(b);
        }
    }
    ctf.calibrated = true;
    ctf.tree_log_nc = Some(ncs);
    Ok(())
}

/// Log normalization constant of a calibrated tree; every clique belief
/// must agree.
pub fn log_nc(ctf: &Ctf, tree: &[CliqueId]) -> Result<f64> {
    let root = *tree.first().ok_or_else(|| IbiaError::InvalidParameter("empty tree".into()))?;
    let missing = || IbiaError::InvalidParameter(format!("clique {root}'s tree is not calibrated"));
    let reference = ctf.clique(root).belief.as_ref().ok_or_else(missing)?.log_norm_constant();
    for &c in tree {
        let nc = ctf.clique(c).belief.as_ref().ok_or_else(missing)?.log_norm_constant();
        let agree = if reference == f64::NEG_INFINITY || nc == f64::NEG_INFINITY {
            reference == nc
        } else {
            (nc - reference).abs() <= NC_TOL * reference.abs().max(1.0)
        };
        if !agree {
            return Err(IbiaError::NumericalFailure {
                root,
                detail: format!("clique {c} has log NC {nc}, root has {reference}"),
            });
        }
    }
    Ok(reference)
}

/// Log normalization constant of every tree, in `trees()` order.
pub fn tree_log_ncs(ctf: &Ctf) -> Result<Vec<f64>> {
    ctf.trees().iter().map(|t| log_nc(ctf, t)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeDiscrepancy {
    pub a: CliqueId,
    pub b: CliqueId,
    pub discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    pub edges: Vec<EdgeDiscrepancy>,
    pub max_discrepancy: f64,
}

impl CalibrationReport {
    pub fn within(&self, tol: f64) -> bool {
        self.max_discrepancy <= tol
    }

    pub fn flagged(&self, tol: f64) -> Vec<(CliqueId, CliqueId)> {
        self.edges.iter().filter(|e| e.discrepancy > tol).map(|e| (e.a, e.b)).collect()
    }
}

/// For every edge, the largest difference between the two clique
/// projections onto the sepset and the stored sepset belief, relative to the
/// largest entry involved.
pub fn check_calibration(ctf: &Ctf) -> Result<CalibrationReport> {
    let mut edges = Vec::new();
    let mut max_discrepancy: f64 = 0.0;
    for e in ctf.edges() {
        let missing = || IbiaError::InvalidParameter(format!("edge {}-{} lacks beliefs", e.a, e.b));
        let mu = e.belief.as_ref().ok_or_else(missing)?.reordered(&e.vars)?;
        let pa = ctf.clique(e.a).belief.as_ref().ok_or_else(missing)?.marginal_onto(&e.vars)?;
        let pb = ctf.clique(e.b).belief.as_ref().ok_or_else(missing)?.marginal_onto(&e.vars)?;
        let (mu, pa, pb) = (mu.linear_values(), pa.linear_values(), pb.linear_values());
        let scale = mu.iter().chain(&pa).chain(&pb).copied().fold(0.0, f64::max);
        let mut worst: f64 = 0.0;
        if scale > 0.0 {
            for i in 0..mu.len() {
                worst = worst.max((pa[i] - mu[i]).abs()).max((pb[i] - mu[i]).abs());
            }
            worst /= scale;
        }
        max_discrepancy = max_discrepancy.max(worst);
        edges.push(EdgeDiscrepancy { a: e.a, b: e.b, discrepancy: worst });
    }
    Ok(CalibrationReport { edges, max_discrepancy })
}
