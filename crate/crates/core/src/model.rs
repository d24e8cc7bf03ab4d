//! UAI model and evidence files, evidence reduction and component splitting.
//!
//! Model grammar (whitespace-separated tokens, newlines insignificant):
//!
//! ```text
//! model    := preamble nvars card{nvars} nfactors scope{nfactors} table{nfactors}
//! preamble := "MARKOV" | "BAYES"
//! scope    := k var{k}
//! table    := len value{len}        // row-major, last scope variable fastest
//! ```
//!
//! Evidence grammar: `count (var state){count}`. A file holding a leading
//! sample count of `1` before the pairs is also accepted.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use crate::error::{IbiaError, Result};
use crate::factor::{Factor, VarId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Markov,
    Bayes,
}

impl ModelKind {
    fn keyword(self) -> &'static str {
        match self {
            ModelKind::Markov => "MARKOV",
            ModelKind::Bayes => "BAYES",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variable {
    pub id: VarId,
    pub cardinality: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    kind: ModelKind,
    cards: Vec<usize>,
    factors: Vec<Factor>,
}

impl Model {
    pub fn new(cards: Vec<usize>, factors: Vec<Factor>) -> Result<Self> {
        Self::with_kind(ModelKind::Markov, cards, factors)
    }

    pub fn with_kind(kind: ModelKind, cards: Vec<usize>, factors: Vec<Factor>) -> Result<Self> {
        if let Some(v) = cards.iter().position(|&c| c == 0) {
            return Err(IbiaError::InvalidFactor(format!("variable {v} has cardinality 0")));
        }
        for f in &factors {
            for (&v, &c) in f.scope().iter().zip(f.cards()) {
                let declared = *cards.get(v).ok_or(IbiaError::UnknownVariable(v))?;
                if declared != c {
                    return Err(IbiaError::CardinalityMismatch { var: v, left: declared, right: c });
                }
            }
        }
        Ok(Self { kind, cards, factors })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn num_vars(&self) -> usize {
        self.cards.len()
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn variables(&self) -> impl Iterator<Item = Variable> + '_ {
        self.cards.iter().enumerate().map(|(id, &cardinality)| Variable { id, cardinality })
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn into_factors(self) -> Vec<Factor> {
        self.factors
    }

    /// Number of joint assignments, as a float to avoid overflow.
    pub fn joint_states(&self) -> f64 {
        self.cards.iter().map(|&c| c as f64).product()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Evidence {
    pub assignments: BTreeMap<VarId, usize>,
}

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(mut self, var: VarId, state: usize) -> Self {
        self.assignments.insert(var, state);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

struct Tokens<'a> {
    items: Vec<(&'a str, usize)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let content = line.split("//").next().unwrap_or("");
            for tok in content.split_whitespace() {
                items.push((tok, i + 1));
            }
        }
        let last_line = text.lines().count().max(1);
        Self { items, pos: 0, last_line }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> IbiaError {
        IbiaError::Parse { line, msg: msg.into() }
    }

    fn next_raw(&mut self, what: &str) -> Result<(&'a str, usize)> {
        let item = self
            .items
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err(self.last_line, format!("unexpected end of input, expected {what}")))?;
        self.pos += 1;
        Ok(item)
    }

    fn usize(&mut self, what: &str) -> Result<(usize, usize)> {
        let (tok, line) = self.next_raw(what)?;
        tok.parse::<usize>().map(|v| (v, line)).map_err(|_| self.err(line, format!("expected {what}, found '{tok}'")))
    }

    fn real(&mut self, what: &str) -> Result<(f64, usize)> {
        let (tok, line) = self.next_raw(what)?;
        tok.parse::<f64>().map(|v| (v, line)).map_err(|_| self.err(line, format!("expected {what}, found '{tok}'")))
    }

    fn finished(&self) -> Option<(&'a str, usize)> {
        self.items.get(self.pos).copied()
    }
}

/// Parses a UAI `MARKOV` or `BAYES` model.
pub fn parse_uai(text: &str) -> Result<Model> {
    let mut toks = Tokens::new(text);
    let (pre, line) = toks.next_raw("preamble")?;
    let kind = match pre.to_ascii_uppercase().as_str() {
        "MARKOV" => ModelKind::Markov,
        "BAYES" => ModelKind::Bayes,
        other => return Err(toks.err(line, format!("unknown preamble '{other}'"))),
    };
    let (nvars, _) = toks.usize("variable count")?;
    let mut cards = Vec::with_capacity(nvars);
    for _ in 0..nvars {
        let (c, line) = toks.usize("cardinality")?;
        if c == 0 {
            return Err(toks.err(line, "cardinality must be at least 1"));
        }
        cards.push(c);
    }
    let (nfactors, _) = toks.usize("factor count")?;
    let mut scopes = Vec::with_capacity(nfactors);
    for _ in 0..nfactors {
        let (k, _) = toks.usize("scope size")?;
        let mut scope = Vec::with_capacity(k);
        for _ in 0..k {
            let (v, line) = toks.usize("variable index")?;
            if v >= nvars {
                return Err(toks.err(line, format!("scope refers to undeclared variable {v}")));
            }
            if scope.contains(&v) {
                return Err(toks.err(line, format!("variable {v} repeated in scope")));
            }
            scope.push(v);
        }
        scopes.push(scope);
    }
    let mut factors = Vec::with_capacity(nfactors);
    for (fi, scope) in scopes.into_iter().enumerate() {
        let fcards: Vec<usize> = scope.iter().map(|&v| cards[v]).collect();
        let expected: usize = fcards.iter().product();
        let (len, line) = toks.usize("table length")?;
        if len != expected {
            return Err(toks.err(line, IbiaError::TableLength { factor: fi, expected, found: len }.to_string()));
        }
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            let (x, line) = toks.real("table entry")?;
            if !(x.is_finite() && x >= 0.0) {
                return Err(toks.err(line, format!("table entry {x} is not a nonnegative real")));
            }
            values.push(x);
        }
        factors.push(Factor::from_linear(scope, fcards, &values)?);
    }
    if let Some((tok, line)) = toks.finished() {
        return Err(toks.err(line, format!("trailing token '{tok}'")));
    }
    Model::with_kind(kind, cards, factors)
}

/// Linear value whose natural log reproduces `log` exactly, when one exists
/// within a few ulps of `exp(log)`.
fn linear_preimage(log: f64) -> f64 {
    let guess = log.exp();
    if log == f64::NEG_INFINITY || guess.ln() == log {
        return guess;
    }
    let (mut up, mut down) = (guess, guess);
    for _ in 0..64 {
        up = up.next_up();
        if up.ln() == log {
            return up;
        }
        down = down.next_down();
        if down.ln() == log {
            return down;
        }
    }
    guess
}

/// Serializes a model to UAI text. Parsing the output reproduces the scopes
/// and tables of `model` exactly.
pub fn to_uai(model: &Model) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", model.kind.keyword());
    let _ = writeln!(out, "{}", model.cards.len());
    let cards: Vec<String> = model.cards.iter().map(|c| c.to_string()).collect();
    let _ = writeln!(out, "{}", cards.join(" "));
    let _ = writeln!(out, "{}", model.factors.len());
    for f in &model.factors {
        let mut line = f.scope().len().to_string();
        for v in f.scope() {
            let _ = write!(line, " {v}");
        }
        let _ = writeln!(out, "{line}");
    }
    for f in &model.factors {
        let _ = writeln!(out, "\n{}", f.len());
        let vals: Vec<String> = f.log_values().iter().map(|&l| format!("{}", linear_preimage(l))).collect();
        let _ = writeln!(out, " {}", vals.join(" "));
    }
    out
}

/// Parses a UAI evidence file against `model`.
pub fn parse_evidence(text: &str, model: &Model) -> Result<Evidence> {
    let mut toks = Tokens::new(text);
    if toks.items.is_empty() {
        return Ok(Evidence::new());
    }
    let remaining = toks.items.len();
    let (first, _) = toks.usize("evidence count")?;
    // Accept the multi-sample header "1 count pairs..." as well as "count pairs...".
    let count = if remaining == 2 * first + 1 {
        first
    } else if first == 1 && remaining >= 2 {
        let (count, line) = toks.usize("evidence count")?;
        if remaining != 2 * count + 2 {
            return Err(toks.err(line, "evidence pair count does not match header"));
        }
        count
    } else {
        return Err(toks.err(1, "evidence pair count does not match header"));
    };
    let mut ev = Evidence::new();
    for _ in 0..count {
        let (var, line) = toks.usize("evidence variable")?;
        let (state, _) = toks.usize("evidence state")?;
        if var >= model.num_vars() {
            return Err(toks.err(line, format!("evidence on undeclared variable {var}")));
        }
        ev.assignments.insert(var, state);
    }
    validate_evidence(model, &ev)?;
    Ok(ev)
}

fn validate_evidence(model: &Model, ev: &Evidence) -> Result<()> {
    for (&var, &state) in &ev.assignments {
        let card = *model.cards.get(var).ok_or(IbiaError::UnknownVariable(var))?;
        if state >= card {
            return Err(IbiaError::StateOutOfRange { var, state, card });
        }
    }
    Ok(())
}

/// Slices every factor to the observed states and drops the evidence
/// variables. Remaining variables are renumbered densely in their original
/// order. Factors whose whole scope was observed become empty-scope factors.
pub fn apply_evidence(model: &Model, ev: &Evidence) -> Result<Model> {
    validate_evidence(model, ev)?;
    let mut remap = vec![usize::MAX; model.num_vars()];
    let mut cards = Vec::new();
    for (v, slot) in remap.iter_mut().enumerate() {
        if !ev.assignments.contains_key(&v) {
            *slot = cards.len();
            cards.push(model.cards[v]);
        }
    }
    let mut factors = Vec::with_capacity(model.factors.len());
    for f in &model.factors {
        let strides = f.strides();
        let mut base = 0;
        let mut free = Vec::new();
        for (i, &v) in f.scope().iter().enumerate() {
            match ev.assignments.get(&v) {
                Some(&s) => base += s * strides[i],
                None => free.push(i),
            }
        }
        let fcards: Vec<usize> = free.iter().map(|&i| f.cards()[i]).collect();
        let total: usize = fcards.iter().product();
        let mut values = Vec::with_capacity(total);
        let mut counter = vec![0usize; free.len()];
        for _ in 0..total {
            let idx = base + counter.iter().zip(&free).map(|(c, &i)| c * strides[i]).sum::<usize>();
            values.push(f.log_values()[idx]);
            for d in (0..free.len()).rev() {
                counter[d] += 1;
                if counter[d] < fcards[d] {
                    break;
                }
                counter[d] = 0;
            }
        }
        let scope = free.iter().map(|&i| remap[f.scope()[i]]).collect();
        factors.push(Factor::from_log(scope, fcards, values)?);
    }
    Model::with_kind(model.kind, cards, factors)
}

/// One connected piece of a model, renumbered densely.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub model: Model,
    /// `var_map[local] = original id`.
    pub var_map: Vec<VarId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Components {
    pub parts: Vec<Component>,
    /// Natural-log mass of empty-scope factors plus the domain sizes of
    /// variables that appear in no factor.
    pub scalar_log_mass: f64,
}

/// Splits a model into connected components of its induced graph.
pub fn connected_components(model: &Model) -> Components {
    let n = model.num_vars();
    let mut var_factors: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut scalar_log_mass = 0.0;
    for (fi, f) in model.factors.iter().enumerate() {
        if f.scope().is_empty() {
            scalar_log_mass += f.log_norm_constant();
        }
        for &v in f.scope() {
            var_factors[v].push(fi);
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut parts = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        if var_factors[start].is_empty() {
            scalar_log_mass += (model.cards[start] as f64).ln();
            label[start] = usize::MAX - 1;
            continue;
        }
        let comp = parts.len();
        let mut vars = Vec::new();
        let mut queue = VecDeque::from([start]);
        label[start] = comp;
        while let Some(v) = queue.pop_front() {
            vars.push(v);
            for &fi in &var_factors[v] {
                for &w in model.factors[fi].scope() {
                    if label[w] == usize::MAX {
                        label[w] = comp;
                        queue.push_back(w);
                    }
                }
            }
        }
        vars.sort_unstable();
        parts.push(vars);
    }
    let mut local = vec![0usize; n];
    for vars in &parts {
        for (i, &v) in vars.iter().enumerate() {
            local[v] = i;
        }
    }
    let mut comp_factors: Vec<Vec<Factor>> = vec![Vec::new(); parts.len()];
    for f in &model.factors {
        if let Some(&v0) = f.scope().first() {
            let scope = f.scope().iter().map(|&v| local[v]).collect();
            let g = Factor::from_log(scope, f.cards().to_vec(), f.log_values().to_vec())
                .expect("renumbering keeps a valid factor");
            comp_factors[label[v0]].push(g);
        }
    }
    let parts = parts
        .into_iter()
        .zip(comp_factors)
        .map(|(vars, factors)| {
            let cards = vars.iter().map(|&v| model.cards[v]).collect();
            Component {
                model: Model::with_kind(model.kind, cards, factors).expect("component is consistent"),
                var_map: vars,
            }
        })
        .collect();
    Components { parts, scalar_log_mass }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_file() {
        let m = parse_uai("MARKOV\n1\n2\n1\n1 0\n2\n0.3 0.7").unwrap();
        assert_eq!(m.num_vars(), 1);
        assert_eq!(m.factors().len(), 1);
        let v = m.factors()[0].linear_values();
        assert!((v[0] - 0.3).abs() < 1e-15 && (v[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn row_major_tables() {
        let m = parse_uai("BAYES\n2\n2 2\n1\n2 0 1\n4\n1 2 3 4\n").unwrap();
        assert_eq!(m.kind(), ModelKind::Bayes);
        let f = &m.factors()[0];
        assert_eq!(f.scope(), &[0, 1]);
        let v = f.linear_values();
        for (a, b) in v.iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parse_errors_carry_lines() {
        let e = parse_uai("MARKOV\n1\n2\n1\n1 3\n2\n0.3 0.7").unwrap_err();
        assert_eq!(e, IbiaError::Parse { line: 5, msg: "scope refers to undeclared variable 3".into() });
        let e = parse_uai("MARKOV\n1\n2\n1\n1 0\n3\n0.3 0.7 0.1").unwrap_err();
        assert!(matches!(e, IbiaError::Parse { line: 6, .. }), "{e}");
        let e = parse_uai("NOPE\n1\n2").unwrap_err();
        assert!(matches!(e, IbiaError::Parse { line: 1, .. }));
        let e = parse_uai("MARKOV\n1\n2\n1\n1 0\n2\n0.3 x").unwrap_err();
        assert!(matches!(e, IbiaError::Parse { line: 7, .. }));
        assert!(parse_uai("MARKOV\n1\n2\n1\n1 0\n2\n0.3").is_err());
    }

    #[test]
    fn evidence_slicing() {
        let m = parse_uai("MARKOV\n2\n2 2\n1\n2 0 1\n4\n1 2 3 4\n").unwrap();
        let r = apply_evidence(&m, &Evidence::new().observe(0, 1)).unwrap();
        assert_eq!(r.num_vars(), 1);
        let f = &r.factors()[0];
        assert_eq!(f.scope(), &[0]);
        let v = f.linear_values();
        assert!((v[0] - 3.0).abs() < 1e-12 && (v[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn evidence_on_whole_scope_gives_scalar() {
        let m = parse_uai("MARKOV\n1\n2\n1\n1 0\n2\n0.3 0.7").unwrap();
        let r = apply_evidence(&m, &Evidence::new().observe(0, 0)).unwrap();
        assert_eq!(r.num_vars(), 0);
        assert!(r.factors()[0].scope().is_empty());
        assert!((r.factors()[0].log_values()[0].exp() - 0.3).abs() < 1e-15);
        let c = connected_components(&r);
        assert!(c.parts.is_empty());
        assert!((c.scalar_log_mass - 0.3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn evidence_errors() {
        let m = parse_uai("MARKOV\n1\n2\n1\n1 0\n2\n0.3 0.7").unwrap();
        assert_eq!(
            apply_evidence(&m, &Evidence::new().observe(0, 2)),
            Err(IbiaError::StateOutOfRange { var: 0, state: 2, card: 2 })
        );
        assert_eq!(apply_evidence(&m, &Evidence::new().observe(4, 0)), Err(IbiaError::UnknownVariable(4)));
    }

    #[test]
    fn evidence_file_formats() {
        let m = parse_uai("MARKOV\n3\n2 2 2\n1\n3 0 1 2\n8\n1 1 1 1 1 1 1 1\n").unwrap();
        let a = parse_evidence("2 0 1 2 0", &m).unwrap();
        let b = parse_evidence("1\n2 0 1 2 0\n", &m).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.assignments.len(), 2);
        assert!(parse_evidence("", &m).unwrap().is_empty());
        assert!(parse_evidence("1 0 5", &m).is_err());
    }

    #[test]
    fn chain_splits_on_evidence() {
        // a - b - c with b observed.
        let text = "MARKOV\n3\n2 2 2\n2\n2 0 1\n2 1 2\n4\n1 2 3 4\n4\n5 6 7 8\n";
        let m = parse_uai(text).unwrap();
        assert_eq!(connected_components(&m).parts.len(), 1);
        let r = apply_evidence(&m, &Evidence::new().observe(1, 0)).unwrap();
        let c = connected_components(&r);
        assert_eq!(c.parts.len(), 2);
        assert_eq!(c.parts[0].var_map, vec![0]);
        assert_eq!(c.parts[1].var_map, vec![1]);
    }

    #[test]
    fn components_of_disjoint_pairs() {
        let f = |s: Vec<usize>| Factor::ones(s, vec![2, 2]);
        let m = Model::new(vec![2; 4], vec![f(vec![0, 1]), f(vec![2, 3])]).unwrap();
        let c = connected_components(&m);
        assert_eq!(c.parts.len(), 2);
        assert!(c.parts.iter().all(|p| p.model.num_vars() == 2));
        let single = Model::new(vec![2; 2], vec![f(vec![0, 1])]).unwrap();
        assert_eq!(connected_components(&single).parts.len(), 1);
    }

    #[test]
    fn isolated_variables_contribute_their_domain() {
        let m = Model::new(vec![2, 3], vec![Factor::ones(vec![0], vec![2])]).unwrap();
        let c = connected_components(&m);
        assert_eq!(c.parts.len(), 1);
        assert!((c.scalar_log_mass - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn serialization_roundtrip_is_exact() {
        let text = "MARKOV\n3\n2 3 2\n2\n2 0 1\n2 1 2\n6\n0.1 0.2 0.3 0 0.5 0.6\n6\n1e-5 2 3 4 5 6\n";
        let m = parse_uai(text).unwrap();
        let again = parse_uai(&to_uai(&m)).unwrap();
        assert_eq!(m, again);
    }
}
