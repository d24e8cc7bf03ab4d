//! The build → calibrate → approximate loop and the partition function
//! estimate assembled from it.

use std::f64::consts::LN_10;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::approx::{
    approximate_ctf, check_approximation, interface_variables, reparameterize, serialize_log, ApproxOptions,
    ApproxReport, Heuristic,
};
use crate::build::{build_ctf, initial_ctf, BuildStats};
use crate::calibration::{calibrate, check_calibration};
use crate::ctf::{clique_size, SIZE_EPS};
use crate::error::{IbiaError, Result};
use crate::factor::VarId;
use crate::model::{apply_evidence, connected_components, Evidence, Model};

pub const DEFAULT_MCS_P: f64 = 20.0;
/// Gap between the build bound and the default approximation bound.
pub const DEFAULT_MCS_GAP: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Options {
    pub mcs_p: f64,
    /// Defaults to `mcs_p - 5`.
    pub mcs_im: Option<f64>,
    pub heuristic: Heuristic,
    pub seed: u64,
    /// Raise `mcs_p` by one whenever a build step adds nothing.
    pub escalate: bool,
    /// Check validity, calibration and normalization after every step.
    pub verify: bool,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            mcs_p: DEFAULT_MCS_P,
            mcs_im: None,
            heuristic: Heuristic::MaxMi,
            seed: 0,
            escalate: false,
            verify: false,
        }
    }
}

impl Options {
    pub fn with_bounds(mcs_p: f64, mcs_im: f64) -> Self {
        Self { mcs_p, mcs_im: Some(mcs_im), ..Self::default() }
    }

    pub fn mcs_im(&self) -> f64 {
        self.mcs_im.unwrap_or(self.mcs_p - DEFAULT_MCS_GAP)
    }
}

/// One calibrated forest of the sequence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CtfRecord {
    pub index: usize,
    pub mcs_p: f64,
    pub max_clique_size: f64,
    pub cliques: usize,
    pub trees: usize,
    pub factors_added: usize,
    pub deferred: usize,
    pub interface_vars: Vec<VarId>,
    #[serde(serialize_with = "serialize_logs")]
    pub tree_log_nc: Vec<f64>,
    pub build: BuildStats,
    pub approx: Option<ApproxReport>,
}

fn serialize_logs<S: serde::Serializer>(xs: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct L(#[serde(serialize_with = "serialize_log")] f64);
    s.collect_seq(xs.iter().map(|&x| L(x)))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SctfTrace {
    pub records: Vec<CtfRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentResult {
    /// Original variable id of each component variable.
    pub var_map: Vec<VarId>,
    #[serde(serialize_with = "serialize_log")]
    pub log_nc: f64,
    pub final_mcs_p: f64,
    pub trace: SctfTrace,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrEstimate {
    #[serde(serialize_with = "serialize_log")]
    pub log10_pr: f64,
    #[serde(serialize_with = "serialize_log")]
    pub scalar_log_mass: f64,
    pub peak_max_clique_size: f64,
    pub components: Vec<ComponentResult>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl PrEstimate {
    /// Everything except timing; identical runs give identical text.
    pub fn trace_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Trace plus wall time.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Full<'a> {
            #[serde(flatten)]
            estimate: &'a PrEstimate,
            wall_time_secs: f64,
        }
        serde_json::to_string_pretty(&Full { estimate: self, wall_time_secs: self.wall_time_secs })
            .expect("serializable")
    }

    pub fn num_ctfs(&self) -> usize {
        self.components.iter().map(|c| c.trace.records.len()).max().unwrap_or(0)
    }
}

/// Runs the sequence for one connected model; returns its log normalization
/// constant (natural log).
pub fn run_component(model: Model, opts: &Options, index: usize) -> Result<ComponentResult> {
    let mcs_im = opts.mcs_im();
    let cards = model.cards().to_vec();
    for f in model.factors() {
        let size = clique_size(f.scope(), &cards)?;
        if size > opts.mcs_p + SIZE_EPS {
            return Err(IbiaError::BoundTooSmall { bound: opts.mcs_p, size });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(index as u64));
    let approx_opts = ApproxOptions { mcs_im, heuristic: opts.heuristic };
    let (mut ctf, mut pending) = initial_ctf(cards, model.into_factors());
    let mut carried = ctf.factors.len();
    let mut mcs_p = opts.mcs_p;
    let mut records = Vec::new();
    loop {
        let outcome = build_ctf(&mut ctf, pending, mcs_p)?;
        if outcome.stats.factors_added + carried == 0 {
            if opts.escalate {
                mcs_p += 1.0;
                pending = outcome.deferred;
                continue;
            }
            return Err(IbiaError::Infeasible(format!(
                "no remaining factor fits within mcs_p = {mcs_p}; {} deferred",
                outcome.deferred.len()
            )));
        }
        carried = 0;
        calibrate(&mut ctf)?;
        if opts.verify {
            let v = ctf.validate();
            if !v.is_valid() {
                return Err(IbiaError::Internal(format!("built forest invalid: {:?}", v.violations)));
            }
            let cal = check_calibration(&ctf)?;
            if !cal.within(1e-9) {
                return Err(IbiaError::Internal(format!("calibration off by {}", cal.max_discrepancy)));
            }
        }
        let iv = interface_variables(&ctf, &outcome.deferred);
        let mut record = CtfRecord {
            index: records.len() + 1,
            mcs_p,
            max_clique_size: ctf.max_clique_size(),
            cliques: ctf.num_cliques(),
            trees: ctf.num_trees(),
            factors_added: outcome.stats.factors_added,
            deferred: outcome.deferred.len(),
            interface_vars: iv.ivs.into_iter().collect(),
            tree_log_nc: ctf.tree_log_nc.clone().unwrap_or_default(),
            build: outcome.stats,
            approx: None,
        };
        if outcome.deferred.is_empty() {
            if record.trees != 1 {
                return Err(IbiaError::Internal(format!(
                    "final forest of a connected component has {} trees",
                    record.trees
                )));
            }
            let log_nc = record.tree_log_nc[0];
            records.push(record);
            return Ok(ComponentResult {
                var_map: Vec::new(),
                log_nc,
                final_mcs_p: mcs_p,
                trace: SctfTrace { records },
            });
        }
        let (mut next, report) = approximate_ctf(&ctf, &outcome.deferred, &approx_opts, &mut rng)?;
        if opts.verify {
            check_approximation(&next, &report, 1e-9)?;
        }
        record.approx = Some(report);
        records.push(record);
        reparameterize(&mut next)?;
        ctf = next;
        pending = outcome.deferred;
    }
}

/// Estimates the partition function of `model`, component by component.
pub fn estimate_log_pr(model: &Model, opts: &Options) -> Result<PrEstimate> {
    let start = Instant::now();
    if opts.mcs_im().partial_cmp(&opts.mcs_p) != Some(std::cmp::Ordering::Less) {
        return Err(IbiaError::InvalidParameter(format!(
            "mcs_im ({}) must be below mcs_p ({})",
            opts.mcs_im(),
            opts.mcs_p
        )));
    }
    let split = connected_components(model);
    let components = split
        .parts
        .into_par_iter()
        .enumerate()
        .map(|(i, part)| {
            let mut r = run_component(part.model, opts, i)?;
            r.var_map = part.var_map;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = components.iter().map(|c| c.log_nc).sum::<f64>() + split.scalar_log_mass;
    let log10_pr = if total == f64::NEG_INFINITY { total } else { total / LN_10 };
    let peak_max_clique_size =
        components.iter().flat_map(|c| c.trace.records.iter().map(|r| r.max_clique_size)).fold(0.0, f64::max);
    Ok(PrEstimate {
        log10_pr,
        scalar_log_mass: split.scalar_log_mass,
        peak_max_clique_size,
        components,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Applies `evidence` and estimates the partition function of the result.
pub fn estimate_with_evidence(model: &Model, evidence: &Evidence, opts: &Options) -> Result<PrEstimate> {
    let reduced = apply_evidence(model, evidence)?;
    estimate_log_pr(&reduced, opts)
}
