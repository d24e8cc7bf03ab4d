//! Exact reference computations and benchmark plumbing.

use std::collections::BTreeMap;
use std::f64::consts::LN_10;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::build::{build_ctf, containing_clique, initial_ctf};
use crate::calibration::{calibrate, tree_log_ncs};
use crate::ctf::clique_size;
use crate::driver::{estimate_with_evidence, Options};
use crate::error::{IbiaError, Result};
use crate::model::{connected_components, parse_evidence, parse_uai, Evidence, Model};
use crate::triangulation::{compile, induced_graph};

/// Default limit on joint states for exhaustive computations.
pub const STATE_CAP: u64 = 1 << 22;

/// Natural-log partition function by summing over every joint assignment.
pub fn brute_force_log_pr(model: &Model, cap: u64) -> Result<f64> {
    let states = model.joint_states();
    if states > cap as f64 {
        return Err(IbiaError::CapExceeded { states, cap });
    }
    let cards = model.cards();
    let n = cards.len();
    let layouts: Vec<(Vec<usize>, Vec<usize>)> =
        model.factors().iter().map(|f| (f.scope().to_vec(), f.strides())).collect();
    let mut assignment = vec![0usize; n];
    let (mut max, mut sum) = (f64::NEG_INFINITY, 0.0);
    for _ in 0..states as u64 {
        let mut x = 0.0;
        for (f, (scope, strides)) in model.factors().iter().zip(&layouts) {
            let idx: usize = scope.iter().zip(strides).map(|(&v, &s)| assignment[v] * s).sum();
            x += f.log_values()[idx];
        }
        if x > max {
            sum = if max == f64::NEG_INFINITY { 1.0 } else { sum * (max - x).exp() + 1.0 };
            max = x;
        } else if x != f64::NEG_INFINITY {
            sum += (x - max).exp();
        }
        for d in (0..n).rev() {
            assignment[d] += 1;
            if assignment[d] < cards[d] {
                break;
            }
            assignment[d] = 0;
        }
    }
    Ok(if max == f64::NEG_INFINITY { max } else { max + sum.ln() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FullCompile {
    /// Largest clique of the min-fill compilation.
    pub mcs_f: f64,
    /// Exact natural-log partition function, when every clique table fits
    /// within the cap.
    pub log_pr: Option<f64>,
}

/// Compiles the whole model with min-fill and, when affordable, calibrates
/// it exactly.
pub fn full_compile_stats(model: &Model, cap: u64) -> Result<FullCompile> {
    let forest = compile(&induced_graph(model.factors()));
    let mcs_f = forest.max_size(model.cards());
    if mcs_f > (cap as f64).log2() {
        return Ok(FullCompile { mcs_f, log_pr: None });
    }
    let (mut ctf, _) = forest.to_ctf(model.cards().to_vec());
    let split = connected_components(model);
    for f in model.factors() {
        if f.scope().is_empty() {
            continue;
        }
        let mut scope = f.scope().to_vec();
        scope.sort_unstable();
        let home = containing_clique(&ctf, &scope)
            .ok_or_else(|| IbiaError::Internal("compiled cliques miss a factor scope".into()))?;
        ctf.assign_factor(home, f.clone());
    }
    calibrate(&mut ctf)?;
    let log_pr = tree_log_ncs(&ctf)?.iter().sum::<f64>() + split.scalar_log_mass;
    Ok(FullCompile { mcs_f, log_pr: Some(log_pr) })
}

/// Rounds to three decimals, as used for reported errors.
pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// `|est - reference|` in log10, rounded to three decimals. Two `-inf`
/// values agree; a single `-inf` cannot be compared.
pub fn compare_error(est_log10: f64, ref_log10: f64) -> Result<f64> {
    match (est_log10 == f64::NEG_INFINITY, ref_log10 == f64::NEG_INFINITY) {
        (true, true) => Ok(0.0),
        (false, false) => Ok(round3((est_log10 - ref_log10).abs())),
        _ => Err(IbiaError::Incomparable(format!("estimate {est_log10} vs reference {ref_log10}"))),
    }
}

/// Clique size of the first incrementally built forest against a min-fill
/// compilation of the same factors: `(mcs_ibia, mcs_f)`.
pub fn incremental_vs_full(model: &Model, mcs_p: f64) -> Result<(f64, f64)> {
    let (mut ctf, rest) = initial_ctf(model.cards().to_vec(), model.factors().to_vec());
    build_ctf(&mut ctf, rest, mcs_p)?;
    let mcs_ibia = ctf.max_clique_size();
    let mcs_f = compile(&induced_graph(&ctf.factors)).max_size(model.cards());
    Ok((mcs_ibia, mcs_f))
}

/// Largest clique size of any single factor.
pub fn max_factor_size(model: &Model) -> Result<f64> {
    model.factors().iter().map(|f| clique_size(f.scope(), model.cards())).try_fold(0.0, |a, s| Ok(f64::max(a, s?)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub name: String,
    pub estimate: Option<f64>,
    pub reference: Option<f64>,
    pub error: Option<f64>,
    pub seconds: f64,
    pub status: String,
}

/// Reads `name,log10_pr` rows; a header line and `#` comments are skipped.
pub fn parse_reference_csv(text: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let (Some(name), Some(value)) = (parts.next(), parts.next()) else {
            return Err(IbiaError::Parse { line: i + 1, msg: "expected name,log10_pr".into() });
        };
        let parsed = match value {
            "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
            v => v.parse::<f64>(),
        };
        match parsed {
            Ok(v) => {
                out.insert(name.to_string(), v);
            }
            Err(_) if i == 0 => continue,
            Err(_) => return Err(IbiaError::Parse { line: i + 1, msg: format!("bad value '{value}'") }),
        }
    }
    Ok(out)
}

fn model_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| IbiaError::InvalidParameter(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "uai"))
        .collect();
    files.sort();
    Ok(files)
}

/// Runs the estimator on every `.uai` file of `dir` (with a sibling
/// `.uai.evid` file when present) and compares against `reference`.
pub fn bench_dir(dir: &Path, reference: &BTreeMap<String, f64>, opts: &Options) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for path in model_files(dir)? {
        let name = path.file_name().expect("file").to_string_lossy().into_owned();
        let reference = reference.get(&name).or_else(|| reference.get(name.trim_end_matches(".uai"))).copied();
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| IbiaError::InvalidParameter(e.to_string()));
        let run = || -> Result<(f64, f64)> {
            let model = parse_uai(&read(&path)?)?;
            let evid_path = path.with_extension("uai.evid");
            let evidence =
                if evid_path.exists() { parse_evidence(&read(&evid_path)?, &model)? } else { Evidence::new() };
            let est = estimate_with_evidence(&model, &evidence, opts)?;
            Ok((est.log10_pr, est.wall_time_secs))
        };
        let row = match run() {
            Ok((est, secs)) => {
                let (error, status) = match reference.map(|r| compare_error(est, r)) {
                    Some(Ok(e)) => (Some(e), "ok".to_string()),
                    Some(Err(e)) => (None, e.to_string()),
                    None => (None, "no reference".to_string()),
                };
                BenchRow { name, estimate: Some(est), reference, error, seconds: secs, status }
            }
            Err(e) => BenchRow { name, estimate: None, reference, error: None, seconds: 0.0, status: e.to_string() },
        };
        rows.push(row);
    }
    Ok(rows)
}

fn fmt_opt(x: Option<f64>, digits: usize) -> String {
    match x {
        Some(v) if v == f64::NEG_INFINITY => "-inf".into(),
        Some(v) => format!("{v:.digits$}"),
        None => String::new(),
    }
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("name,log10_pr,reference,abs_error,seconds,status\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.3},{}",
            r.name,
            fmt_opt(r.estimate, 6),
            fmt_opt(r.reference, 6),
            fmt_opt(r.error, 3),
            r.seconds,
            r.status.replace(',', ";")
        );
    }
    out
}

/// Average, maximum and minimum of a sample.
pub fn summary(xs: &[f64]) -> (f64, f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let avg = xs.iter().sum::<f64>() / xs.len() as f64;
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    (avg, max, min)
}

/// Natural log to log10, keeping `-inf`.
pub fn to_log10(ln: f64) -> f64 {
    ln / LN_10
}
