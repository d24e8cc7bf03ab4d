#![allow(dead_code)]

use std::collections::BTreeSet;

use ibia::approx::local_marginalize;
use ibia::calibration::calibrate;
use ibia::ctf::Ctf;
use ibia::factor::{Factor, VarId};
use ibia::model::Model;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random table with entries in (0.05, 1], each zero with probability `zeros`.
pub fn random_table(rng: &mut ChaCha8Rng, len: usize, zeros: f64) -> Vec<f64> {
    (0..len).map(|_| if rng.random_bool(zeros) { 0.0 } else { rng.random_range(0.05..1.0) }).collect()
}

pub fn random_factor(rng: &mut ChaCha8Rng, scope: Vec<VarId>, cards: &[usize], zeros: f64) -> Factor {
    let fc: Vec<usize> = scope.iter().map(|&v| cards[v]).collect();
    let len = fc.iter().product();
    Factor::from_linear(scope, fc, &random_table(rng, len, zeros)).unwrap()
}

pub struct Shape {
    pub vars: std::ops::RangeInclusive<usize>,
    pub max_card: usize,
    /// Extra factors per variable beyond the spanning ones.
    pub density: f64,
    pub zeros: f64,
}

pub const SMALL: Shape = Shape { vars: 8..=14, max_card: 2, density: 0.6, zeros: 0.05 };

/// Connected model: a random spanning structure of pairwise/ternary factors
/// plus extra unary, pairwise and ternary factors.
pub fn random_model(rng: &mut ChaCha8Rng, shape: &Shape) -> Model {
    let n = rng.random_range(shape.vars.clone());
    let cards: Vec<usize> = (0..n).map(|_| rng.random_range(2..=shape.max_card)).collect();
    let mut order: Vec<VarId> = (0..n).collect();
    order.shuffle(rng);
    let mut scopes: Vec<Vec<VarId>> = Vec::new();
    for i in 1..n {
        let anchor = order[rng.random_range(0..i)];
        let mut s = vec![anchor, order[i]];
        if i >= 2 && rng.random_bool(0.3) {
            let third = order[rng.random_range(0..i)];
            if !s.contains(&third) {
                s.push(third);
            }
        }
        scopes.push(s);
    }
    let extra = (shape.density * n as f64).round() as usize;
    for _ in 0..extra {
        let arity = rng.random_range(1..=3usize).min(n);
        let mut pool: Vec<VarId> = (0..n).collect();
        pool.shuffle(rng);
        scopes.push(pool[..arity].to_vec());
    }
    scopes.shuffle(rng);
    let factors = scopes.into_iter().map(|s| random_factor(rng, s, &cards, shape.zeros)).collect();
    Model::new(cards, factors).unwrap()
}

/// Variable names of the worked example, in id order.
pub const NAMES: [&str; 14] = ["a", "b", "c", "d", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o"];

pub fn var(name: &str) -> VarId {
    NAMES.iter().position(|&n| n == name).unwrap()
}

pub const EXAMPLE_SCOPES: [&str; 12] = ["dfg", "chj", "il", "hi", "dgh", "dhk", "abf", "jm", "fmn", "dmo", "fo", "klo"];

/// The fourteen-variable worked example with random positive tables.
pub fn running_example(rng: &mut ChaCha8Rng) -> Model {
    let cards = vec![2; NAMES.len()];
    let factors = EXAMPLE_SCOPES
        .iter()
        .map(|s| {
            let scope = s.chars().map(|c| var(&c.to_string())).collect();
            random_factor(rng, scope, &cards, 0.0)
        })
        .collect();
    Model::new(cards, factors).unwrap()
}

pub fn scope_of(names: &str) -> Vec<VarId> {
    let mut s: Vec<VarId> = names.chars().map(|c| var(&c.to_string())).collect();
    s.sort_unstable();
    s
}

pub fn close_log10(est: f64, reference: f64, rel: f64) -> bool {
    if est == f64::NEG_INFINITY || reference == f64::NEG_INFINITY {
        return est == reference;
    }
    (est - reference).abs() <= rel * reference.abs().max(1.0)
}

/// Every assignment of `cards`, last position fastest.
pub fn assignments(cards: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &c in cards {
        out = out.into_iter().flat_map(|a| (0..c).map(move |s| [a.clone(), vec![s]].concat())).collect();
    }
    out
}

/// Linear value of `f` at the assignment `at` (indexed by variable id).
pub fn value(f: &Factor, at: &[usize]) -> f64 {
    let mut idx = 0;
    for (k, &v) in f.scope().iter().enumerate() {
        idx = idx * f.cards()[k] + at[v];
    }
    f.log_values()[idx].exp()
}

/// Calls `visit` with every full assignment over `vars` (others left 0) in a
/// buffer of length `n`.
pub fn for_each_assignment(vars: &[VarId], cards: &[usize], n: usize, mut visit: impl FnMut(&[usize])) {
    let sub: Vec<usize> = vars.iter().map(|&v| cards[v]).collect();
    let mut at = vec![0; n];
    for a in assignments(&sub) {
        for (&v, &s) in vars.iter().zip(&a) {
            at[v] = s;
        }
        visit(&at);
    }
}

/// Linear partition function by nested loops over every variable.
pub fn naive_z(model: &Model) -> f64 {
    let vars: Vec<VarId> = (0..model.num_vars()).collect();
    let mut z = 0.0;
    for_each_assignment(&vars, model.cards(), vars.len(), |at| {
        z += model.factors().iter().map(|f| value(f, at)).product::<f64>();
    });
    z
}

pub fn close_rel(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs())
}

/// Random factor over 1–4 distinct variables drawn from `cards`.
pub fn random_small_factor(rng: &mut ChaCha8Rng, cards: &[usize], zeros: f64) -> Factor {
    let mut pool: Vec<VarId> = (0..cards.len()).collect();
    pool.shuffle(rng);
    let k = rng.random_range(1..=4usize.min(cards.len()));
    random_factor(rng, pool[..k].to_vec(), cards, zeros)
}

fn union(a: &[VarId], b: &[VarId]) -> Vec<VarId> {
    let mut u: Vec<VarId> = a.iter().chain(b).copied().collect();
    u.sort_unstable();
    u.dedup();
    u
}

/// Largest relative mismatch between `got` and `expected` over the
/// assignments of `vars`.
fn mismatch(got: &Factor, vars: &[VarId], cards: &[usize], expected: impl Fn(&[usize]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for_each_assignment(vars, cards, cards.len(), |at| {
        let (g, e) = (value(got, at), expected(at));
        if g != e {
            worst = worst.max((g - e).abs() / g.abs().max(e.abs()));
        }
    });
    worst
}

pub fn product_error(f: &Factor, g: &Factor, cards: &[usize]) -> f64 {
    let p = f.product(g).unwrap();
    assert_eq!(union(p.scope(), &[]), union(f.scope(), g.scope()));
    mismatch(&p, p.scope(), cards, |at| value(f, at) * value(g, at))
}

pub fn marginal_error(f: &Factor, keep: &[VarId], cards: &[usize]) -> f64 {
    let m = f.marginal_onto(keep).unwrap();
    assert_eq!(m.scope(), keep);
    let dropped: Vec<VarId> = f.scope().iter().copied().filter(|v| !keep.contains(v)).collect();
    mismatch(&m, keep, cards, |at| {
        let mut full = at.to_vec();
        let mut s = 0.0;
        for_each_assignment(&dropped, cards, cards.len(), |d| {
            for &v in &dropped {
                full[v] = d[v];
            }
            s += value(f, &full);
        });
        s
    })
}

/// `f / g` where `g` is a marginal of `f` (so zeros line up).
pub fn divide_error(f: &Factor, g: &Factor, cards: &[usize]) -> f64 {
    let q = f.divide(g).unwrap();
    mismatch(&q, f.scope(), cards, |at| {
        let d = value(g, at);
        if d == 0.0 {
            0.0
        } else {
            value(f, at) / d
        }
    })
}

pub fn naive_log_nc(f: &Factor, cards: &[usize]) -> f64 {
    let mut s = 0.0;
    for_each_assignment(f.scope(), cards, cards.len(), |at| s += value(f, at));
    s.ln()
}

/// Mutual information of `x` and `y` under the normalized marginal of `f`.
pub fn naive_mi(f: &Factor, x: VarId, y: VarId, cards: &[usize]) -> f64 {
    let mut p = vec![vec![0.0; cards[y]]; cards[x]];
    let mut z = 0.0;
    for_each_assignment(f.scope(), cards, cards.len(), |at| {
        let w = value(f, at);
        p[at[x]][at[y]] += w;
        z += w;
    });
    if z == 0.0 {
        return 0.0;
    }
    let px: Vec<f64> = p.iter().map(|r| r.iter().sum::<f64>() / z).collect();
    let py: Vec<f64> = (0..cards[y]).map(|j| p.iter().map(|r| r[j]).sum::<f64>() / z).collect();
    let mut mi = 0.0;
    for i in 0..cards[x] {
        for j in 0..cards[y] {
            let q = p[i][j] / z;
            if q > 0.0 {
                mi += q * (q / (px[i] * py[j])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Runs every table-level oracle on one random case; returns the largest
/// discrepancy (relative, with a unit floor for log-scale quantities).
pub fn algebra_case(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.random_range(2..=5usize);
    let cards: Vec<usize> = (0..n).map(|_| rng.random_range(2..=3)).collect();
    let f = random_small_factor(rng, &cards, 0.1);
    let g = random_small_factor(rng, &cards, 0.1);
    let mut worst = product_error(&f, &g, &cards);
    let mut keep: Vec<VarId> = f.scope().iter().copied().filter(|_| rng.random_bool(0.5)).collect();
    keep.shuffle(rng);
    worst = worst.max(marginal_error(&f, &keep, &cards));
    worst = worst.max(divide_error(&f, &f.marginal_onto(&keep).unwrap(), &cards));
    let (a, b) = (f.log_norm_constant(), naive_log_nc(&f, &cards));
    if a != b {
        worst = worst.max((a - b).abs() / b.abs().max(1.0));
    }
    if f.scope().len() >= 2 {
        let (x, y) = (f.scope()[0], f.scope()[f.scope().len() - 1]);
        let mi = ibia::approx::pairwise_mi(&f, x, y).unwrap();
        worst = worst.max((mi - naive_mi(&f, x, y, &cards)).abs() / mi.abs().max(1.0));
    }
    worst
}

/// First calibrated forest of `model` under `mcs_p`, with the factors it
/// could not take.
pub fn first_ctf(model: &Model, mcs_p: f64) -> (ibia::ctf::Ctf, Vec<Factor>) {
    let (mut ctf, rest) = ibia::build::initial_ctf(model.cards().to_vec(), model.factors().to_vec());
    let out = ibia::build::build_ctf(&mut ctf, rest, mcs_p).unwrap();
    ibia::calibration::calibrate(&mut ctf).unwrap();
    (ctf, out.deferred)
}

/// Calibrated path of scaled all-ones factors over `cliques`, in order.
pub fn uniform_path(rng: &mut ChaCha8Rng, cards: &[usize], cliques: &[Vec<VarId>]) -> Ctf {
    let mut ctf = Ctf::new(cards.to_vec());
    let ids: Vec<_> = cliques.iter().map(|c| ctf.add_clique(c.clone())).collect();
    for w in ids.windows(2) {
        ctf.add_edge(w[0], w[1]);
    }
    for &c in &ids {
        let vars = ctf.clique(c).vars.clone();
        let cs = vars.iter().map(|&v| cards[v]).collect();
        let scale = rng.random_range(0.5..2.0f64).ln();
        ctf.assign_factor(c, Factor::ones(vars, cs).scaled(scale));
    }
    calibrate(&mut ctf).unwrap();
    ctf.clear_factors();
    ctf
}

/// Random path-shaped tree of 3–5 cliques where neighbours share one or two
/// variables; every variable's cliques are contiguous.
pub fn random_path(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<Vec<VarId>>) {
    let k = rng.random_range(3..=5);
    let mut cliques: Vec<Vec<VarId>> = vec![vec![0, 1, 2]];
    let mut next = 3;
    for _ in 1..k {
        let prev = cliques.last().unwrap().clone();
        let shared = rng.random_range(1..=2usize);
        let mut c: Vec<VarId> = prev[prev.len() - shared..].to_vec();
        for _ in 0..rng.random_range(1..=2) {
            c.push(next);
            next += 1;
        }
        cliques.push(c);
    }
    let cards = (0..next).map(|_| rng.random_range(2..=3)).collect();
    (cards, cliques)
}

/// Largest relative difference between the tree joint after local
/// marginalization and the exact joint over the same variables.
pub fn uniform_local_error(rng: &mut ChaCha8Rng) -> Option<f64> {
    let (cards, cliques) = random_path(rng);
    let ctf = uniform_path(rng, &cards, &cliques);
    let tree = ctf.trees().remove(0);
    let exact = ctf.joint_distribution(&tree, 1 << 16).unwrap();
    let mut shared: Vec<VarId> = (0..cards.len()).filter(|&v| ctf.cliques_with(v).len() > 1).collect();
    shared.shuffle(rng);
    let ctf = shared.into_iter().find_map(|v| {
        let holders = ctf.cliques_with(v);
        let keep = BTreeSet::from([holders[rng.random_range(0..holders.len())]]);
        let mut trial = ctf.clone();
        local_marginalize(&mut trial, v, &keep).ok().map(|_| trial)
    })?;
    let tree = ctf.trees().remove(0);
    let approx = ctf.joint_distribution(&tree, 1 << 16).unwrap();
    let reference = exact.marginal_onto(approx.scope()).unwrap();
    let worst = approx
        .linear_values()
        .iter()
        .zip(reference.linear_values())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()))
        .fold(0.0, f64::max);
    Some(worst)
}
