//! Log-space potential tables over ordered variable scopes.
//!
//! Tables are dense and row-major with the last scope variable varying
//! fastest. Entries are natural logs of nonnegative reals; a zero entry is
//! stored as `f64::NEG_INFINITY`.

use crate::error::{IbiaError, Result};

pub type VarId = usize;

#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    scope: Vec<VarId>,
    cards: Vec<usize>,
    values: Vec<f64>,
}

/// `ln(e^a + e^b)` without overflow.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Max-shifted log-sum-exp of a slice. Empty or all-zero input gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

fn table_len(cards: &[usize]) -> usize {
    cards.iter().product()
}

fn row_major_strides(cards: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; cards.len()];
    let mut acc = 1;
    for i in (0..cards.len()).rev() {
        strides[i] = acc;
        acc *= cards[i];
    }
    strides
}

/// Walks every assignment of `cards` in row-major order, calling `f` with the
/// flat index and the offsets into each of the `strides` tables.
fn walk<F: FnMut(usize, &[usize])>(cards: &[usize], strides: &[Vec<usize>], mut f: F) {
    let n = cards.len();
    let total = table_len(cards);
    if total == 0 {
        return;
    }
    let mut counter = vec![0usize; n];
    let mut offsets = vec![0usize; strides.len()];
    for flat in 0..total {
        f(flat, &offsets);
        let mut d = n;
        while d > 0 {
            d -= 1;
            counter[d] += 1;
            for (o, s) in offsets.iter_mut().zip(strides) {
                *o += s[d];
            }
            if counter[d] < cards[d] {
                break;
            }
            for (o, s) in offsets.iter_mut().zip(strides) {
                *o -= s[d] * cards[d];
            }
            counter[d] = 0;
        }
    }
}

impl Factor {
    /// Builds a factor from log-space entries.
    pub fn from_log(scope: Vec<VarId>, cards: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if scope.len() != cards.len() {
            return Err(IbiaError::InvalidFactor(format!(
                "scope has {} variables but {} cardinalities",
                scope.len(),
                cards.len()
            )));
        }
        for (i, v) in scope.iter().enumerate() {
            if scope[..i].contains(v) {
                return Err(IbiaError::InvalidFactor(format!("duplicate variable {v} in scope")));
            }
        }
        if let Some(pos) = cards.iter().position(|&c| c == 0) {
            return Err(IbiaError::InvalidFactor(format!("variable {} has cardinality 0", scope[pos])));
        }
        let expected = table_len(&cards);
        if values.len() != expected {
            return Err(IbiaError::InvalidFactor(format!("table has {} entries, expected {expected}", values.len())));
        }
        if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(IbiaError::InvalidFactor("non-finite log entry".into()));
        }
        Ok(Self { scope, cards, values })
    }

    /// Builds a factor from nonnegative linear entries.
    pub fn from_linear(scope: Vec<VarId>, cards: Vec<usize>, values: &[f64]) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(IbiaError::InvalidFactor(format!("entry {bad} is not a nonnegative real")));
        }
        let logs = values.iter().map(|v| v.ln()).collect();
        Self::from_log(scope, cards, logs)
    }

    /// All-ones table over `scope`.
    pub fn ones(scope: Vec<VarId>, cards: Vec<usize>) -> Self {
        let len = table_len(&cards);
        Self { scope, cards, values: vec![0.0; len] }
    }

    /// Empty-scope factor holding a single log value.
    pub fn scalar(log_value: f64) -> Self {
        Self { scope: Vec::new(), cards: Vec::new(), values: vec![log_value] }
    }

    pub fn scope(&self) -> &[VarId] {
        &self.scope
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn log_values(&self) -> &[f64] {
        &self.values
    }

    pub fn linear_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn contains(&self, var: VarId) -> bool {
        self.scope.contains(&var)
    }

    pub fn card_of(&self, var: VarId) -> Option<usize> {
        self.scope.iter().position(|&v| v == var).map(|i| self.cards[i])
    }

    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.cards)
    }

    /// Log value at an assignment given in scope order.
    pub fn log_value_at(&self, assignment: &[usize]) -> f64 {
        let idx: usize = assignment.iter().zip(self.strides()).map(|(a, s)| a * s).sum();
        self.values[idx]
    }

    /// Strides of this table laid out along `scope` (zero for absent variables).
    fn strides_along(&self, scope: &[VarId]) -> Vec<usize> {
        let own = self.strides();
        scope.iter().map(|v| self.scope.iter().position(|w| w == v).map_or(0, |i| own[i])).collect()
    }

    /// Pointwise product over the union of both scopes (this factor's
    /// variables first, then the other's new variables).
    pub fn product(&self, other: &Factor) -> Result<Factor> {
        let mut scope = self.scope.clone();
        let mut cards = self.cards.clone();
        for (&v, &c) in other.scope.iter().zip(&other.cards) {
            match self.card_of(v) {
                Some(own) if own != c => return Err(IbiaError::CardinalityMismatch { var: v, left: own, right: c }),
                Some(_) => {}
                None => {
                    scope.push(v);
                    cards.push(c);
                }
            }
        }
        let strides = vec![self.strides_along(&scope), other.strides_along(&scope)];
        let mut values = vec![0.0; table_len(&cards)];
        walk(&cards, &strides, |flat, off| {
            values[flat] = self.values[off[0]] + other.values[off[1]];
        });
        // -inf + finite stays -inf; no +inf entries exist.
        Ok(Factor { scope, cards, values })
    }

    /// Sums `var` out of the table.
    pub fn marginalize(&self, var: VarId) -> Result<Factor> {
        if !self.contains(var) {
            return Err(IbiaError::NotInScope { var });
        }
        let keep: Vec<VarId> = self.scope.iter().copied().filter(|&v| v != var).collect();
        self.marginal_onto(&keep)
    }

    /// Sums out every variable in `vars`.
    pub fn sum_out(&self, vars: &[VarId]) -> Result<Factor> {
        if let Some(&v) = vars.iter().find(|v| !self.contains(**v)) {
            return Err(IbiaError::NotInScope { var: v });
        }
        let keep: Vec<VarId> = self.scope.iter().copied().filter(|v| !vars.contains(v)).collect();
        self.marginal_onto(&keep)
    }

    /// Marginal over `keep` (which must be a subset of the scope); the result
    /// follows the order of `keep`.
    pub fn marginal_onto(&self, keep: &[VarId]) -> Result<Factor> {
        let mut cards = Vec::with_capacity(keep.len());
        for &v in keep {
            cards.push(self.card_of(v).ok_or(IbiaError::NotInScope { var: v })?);
        }
        let out_strides = row_major_strides(&cards);
        // Output offsets laid out along this factor's own dimensions.
        let along_self: Vec<usize> =
            self.scope.iter().map(|v| keep.iter().position(|w| w == v).map_or(0, |i| out_strides[i])).collect();
        let out_len = table_len(&cards);
        let mut max = vec![f64::NEG_INFINITY; out_len];
        let strides = vec![along_self];
        walk(&self.cards, &strides, |flat, off| {
            let x = self.values[flat];
            if x > max[off[0]] {
                max[off[0]] = x;
            }
        });
        let mut sum = vec![0.0; out_len];
        walk(&self.cards, &strides, |flat, off| {
            let m = max[off[0]];
            if m != f64::NEG_INFINITY {
                sum[off[0]] += (self.values[flat] - m).exp();
            }
        });
        let values = max.iter().zip(&sum).map(|(&m, &s)| if m == f64::NEG_INFINITY { m } else { m + s.ln() }).collect();
        Ok(Factor { scope: keep.to_vec(), cards, values })
    }

    /// Pointwise division by `den`, broadcast over this factor's scope.
    /// `0/0` is taken as 0; a positive entry over zero is an error.
    pub fn divide(&self, den: &Factor) -> Result<Factor> {
        for (&v, &c) in den.scope.iter().zip(&den.cards) {
            match self.card_of(v) {
                None => return Err(IbiaError::NotInScope { var: v }),
                Some(own) if own != c => return Err(IbiaError::CardinalityMismatch { var: v, left: own, right: c }),
                _ => {}
            }
        }
        let strides = vec![den.strides_along(&self.scope)];
        let mut values = vec![0.0; self.values.len()];
        let mut bad = false;
        walk(&self.cards, &strides, |flat, off| {
            let n = self.values[flat];
            let d = den.values[off[0]];
            values[flat] = if d == f64::NEG_INFINITY {
                if n != f64::NEG_INFINITY {
                    bad = true;
                }
                f64::NEG_INFINITY
            } else {
                n - d
            };
        });
        if bad {
            return Err(IbiaError::CalibrationInconsistency);
        }
        Ok(Factor { scope: self.scope.clone(), cards: self.cards.clone(), values })
    }

    /// Natural log of the sum of all entries.
    pub fn log_norm_constant(&self) -> f64 {
        log_sum_exp(&self.values)
    }

    /// Same table with variables permuted into `scope` order.
    pub fn reordered(&self, scope: &[VarId]) -> Result<Factor> {
        if scope.len() != self.scope.len() {
            return Err(IbiaError::InvalidFactor("reorder needs a permutation of the scope".into()));
        }
        if scope == self.scope.as_slice() {
            return Ok(self.clone());
        }
        let mut cards = Vec::with_capacity(scope.len());
        for (i, &v) in scope.iter().enumerate() {
            if scope[..i].contains(&v) {
                return Err(IbiaError::InvalidFactor(format!("duplicate variable {v} in scope")));
            }
            cards.push(self.card_of(v).ok_or(IbiaError::NotInScope { var: v })?);
        }
        let strides = vec![self.strides_along(scope)];
        let mut values = vec![0.0; self.values.len()];
        walk(&cards, &strides, |flat, off| values[flat] = self.values[off[0]]);
        Ok(Factor { scope: scope.to_vec(), cards, values })
    }

    /// Reorders so the scope is sorted by variable id.
    pub fn sorted(&self) -> Factor {
        let mut scope = self.scope.clone();
        scope.sort_unstable();
        self.reordered(&scope).expect("permutation of own scope")
    }

    /// Adds `log_c` to every entry (scales by `e^log_c`).
    pub fn scaled(&self, log_c: f64) -> Factor {
        let values = self.values.iter().map(|v| v + log_c).collect();
        Factor { scope: self.scope.clone(), cards: self.cards.clone(), values }
    }

    /// Log values rearranged into `scope` order (a permutation of the own scope).
    pub fn aligned_log_values(&self, scope: &[VarId]) -> Result<Vec<f64>> {
        Ok(self.reordered(scope)?.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin(scope: Vec<VarId>, cards: Vec<usize>, values: &[f64]) -> Factor {
        Factor::from_linear(scope, cards, values).unwrap()
    }

    fn close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn product_of_disjoint_unaries() {
        let a = lin(vec![0], vec![2], &[1.0, 2.0]);
        let b = lin(vec![1], vec![2], &[3.0, 4.0]);
        let p = a.product(&b).unwrap();
        assert_eq!(p.scope(), &[0, 1]);
        close(&p.linear_values(), &[3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn product_same_scope() {
        let a = lin(vec![0], vec![2], &[1.0, 2.0]);
        let b = lin(vec![0], vec![2], &[5.0, 6.0]);
        close(&a.product(&b).unwrap().linear_values(), &[5.0, 12.0]);
    }

    #[test]
    fn product_card_mismatch() {
        let a = lin(vec![0], vec![2], &[1.0, 2.0]);
        let b = lin(vec![0], vec![3], &[1.0, 2.0, 3.0]);
        assert!(matches!(a.product(&b), Err(IbiaError::CardinalityMismatch { .. })));
    }

    #[test]
    fn marginalize_last_variable() {
        let f = lin(vec![0, 1], vec![2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let m = f.marginalize(1).unwrap();
        assert_eq!(m.scope(), &[0]);
        close(&m.linear_values(), &[3.0, 7.0]);
        let m0 = f.marginalize(0).unwrap();
        close(&m0.linear_values(), &[4.0, 6.0]);
    }

    #[test]
    fn marginalize_order_invariant() {
        let f = lin(vec![0, 1, 2], vec![2, 3, 2], &(1..=12).map(f64::from).collect::<Vec<_>>());
        let ab = f.marginalize(0).unwrap().marginalize(1).unwrap();
        let ba = f.marginalize(1).unwrap().marginalize(0).unwrap();
        close(ab.log_values(), ba.log_values());
    }

    #[test]
    fn marginalize_missing_var() {
        let f = lin(vec![0], vec![2], &[1.0, 1.0]);
        assert_eq!(f.marginalize(3), Err(IbiaError::NotInScope { var: 3 }));
    }

    #[test]
    fn divide_broadcast() {
        let n = lin(vec![0, 1], vec![2, 2], &[3.0, 4.0, 6.0, 8.0]);
        let d = lin(vec![0], vec![2], &[1.0, 2.0]);
        close(&n.divide(&d).unwrap().linear_values(), &[3.0, 4.0, 3.0, 4.0]);
    }

    #[test]
    fn divide_zero_by_zero_is_zero() {
        let n = lin(vec![0], vec![2], &[0.0, 4.0]);
        let d = lin(vec![0], vec![2], &[0.0, 2.0]);
        close(&n.divide(&d).unwrap().linear_values(), &[0.0, 2.0]);
        let bad = lin(vec![0], vec![2], &[1.0, 4.0]);
        assert_eq!(bad.divide(&d), Err(IbiaError::CalibrationInconsistency));
    }

    #[test]
    fn norm_constants() {
        assert!(lin(vec![0], vec![2], &[0.25, 0.75]).log_norm_constant().abs() < 1e-15);
        let f = lin(vec![0, 1], vec![2, 2], &[1.0; 4]);
        assert!((f.log_norm_constant() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(lin(vec![0], vec![2], &[0.0, 0.0]).log_norm_constant(), f64::NEG_INFINITY);
    }

    #[test]
    fn reorder_roundtrip() {
        let f = lin(vec![4, 1], vec![2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let g = f.reordered(&[1, 4]).unwrap();
        close(&g.linear_values(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(g.reordered(&[4, 1]).unwrap(), f);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(Factor::from_linear(vec![0], vec![2], &[1.0]).is_err());
        assert!(Factor::from_linear(vec![0], vec![2], &[1.0, -1.0]).is_err());
        assert!(Factor::from_linear(vec![0, 0], vec![2, 2], &[1.0; 4]).is_err());
    }
}
