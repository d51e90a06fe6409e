//! Sparse polynomials `P(X_0, ..., X_{d-1})` used as the output layer.

use crate::error::{invalid, Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Product of variables with positive exponents, sorted by variable index.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Monomial(Vec<(u32, u32)>);

impl Monomial {
    /// Builds a monomial from `(variable, exponent)` pairs; repeated
    /// variables are merged and zero exponents dropped.
    pub fn new(pairs: &[(usize, u32)]) -> Self {
        let mut map: BTreeMap<u32, u32> = BTreeMap::new();
        for &(v, e) in pairs {
            if e > 0 {
                *map.entry(v as u32).or_insert(0) += e;
            }
        }
        Monomial(map.into_iter().collect())
    }

    /// Square-free monomial `prod_{v in vars} X_v`.
    pub fn from_set(vars: &[usize]) -> Self {
        Self::new(&vars.iter().map(|&v| (v, 1)).collect::<Vec<_>>())
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.0
    }

    pub fn vars(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().map(|&(v, _)| v as usize)
    }

    /// Number of distinct variables `|S|`.
    pub fn support_size(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&(_, e)| e).sum()
    }

    pub fn is_square_free(&self) -> bool {
        self.0.iter().all(|&(_, e)| e == 1)
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.iter().any(|&(u, _)| u as usize == v)
    }

    pub fn exponent(&self, v: usize) -> u32 {
        self.0.iter().find(|&&(u, _)| u as usize == v).map_or(0, |&(_, e)| e)
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut p = 1.0;
        for &(v, e) in &self.0 {
            let xv = x[v as usize];
            p *= if e == 1 { xv } else { xv.powi(e as i32) };
        }
        p
    }

    fn lower(&self, v: usize) -> Monomial {
        Monomial(
            self.0
                .iter()
                .filter_map(|&(u, e)| if u as usize == v { (e > 1).then_some((u, e - 1)) } else { Some((u, e)) })
                .collect(),
        )
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(v, e)| format!("{v}:{e}")).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// `c_0 + sum_S c_S prod_{i in S} X_i^{e_i}` over `d` variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsePolynomial {
    nvars: usize,
    constant: f64,
    terms: Vec<(Monomial, f64)>,
}

impl SparsePolynomial {
    pub fn new(nvars: usize, constant: f64) -> Self {
        SparsePolynomial { nvars, constant, terms: Vec::new() }
    }

    /// Builds a polynomial from terms, merging duplicates and dropping
    /// zero coefficients.
    pub fn from_terms(nvars: usize, constant: f64, terms: impl IntoIterator<Item = (Monomial, f64)>) -> Result<Self> {
        let mut p = SparsePolynomial::new(nvars, constant);
        for (m, c) in terms {
            p.add_term(m, c)?;
        }
        Ok(p)
    }

    /// `sum_i X_i`.
    pub fn linear(nvars: usize) -> Self {
        let mut p = SparsePolynomial::new(nvars, 0.0);
        for i in 0..nvars {
            p.add_term(Monomial::from_set(&[i]), 1.0).unwrap();
        }
        p
    }

    /// `sum_i X_i + pair_coeff * sum_{i<j} X_i X_j`.
    pub fn linear_plus_pairs(nvars: usize, pair_coeff: f64) -> Self {
        let mut p = Self::linear(nvars);
        for i in 0..nvars {
            for j in i + 1..nvars {
                p.add_term(Monomial::from_set(&[i, j]), pair_coeff).unwrap();
            }
        }
        p
    }

    /// Boolean OR of the inputs, `1 - prod_i (1 - X_i)`, expanded.
    pub fn union(nvars: usize) -> Result<Self> {
        if nvars > 20 {
            return Err(Error::UnsupportedSize(format!("union over {nvars} variables has too many terms")));
        }
        let mut p = SparsePolynomial::new(nvars, 0.0);
        for mask in 1u32..(1 << nvars) {
            let vars: Vec<usize> = (0..nvars).filter(|&i| mask >> i & 1 == 1).collect();
            let sign = if vars.len() % 2 == 1 { 1.0 } else { -1.0 };
            p.add_term(Monomial::from_set(&vars), sign)?;
        }
        Ok(p)
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) -> Result<()> {
        if !c.is_finite() {
            return Err(invalid("polynomial coefficient must be finite"));
        }
        if let Some(v) = m.vars().find(|&v| v >= self.nvars) {
            return Err(invalid(format!("variable X_{v} out of range for {} variables", self.nvars)));
        }
        if m.support_size() == 0 {
            self.constant += c;
            return Ok(());
        }
        match self.terms.binary_search_by(|(k, _)| k.cmp(&m)) {
            Ok(i) => {
                self.terms[i].1 += c;
                if self.terms[i].1 == 0.0 {
                    self.terms.remove(i);
                }
            }
            Err(i) => {
                if c != 0.0 {
                    self.terms.insert(i, (m, c));
                }
            }
        }
        Ok(())
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn terms(&self) -> &[(Monomial, f64)] {
        &self.terms
    }

    /// True when every exponent is 1.
    pub fn is_degree_one(&self) -> bool {
        self.terms.iter().all(|(m, _)| m.is_square_free())
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|(m, _)| m.degree()).max().unwrap_or(0)
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        if m.support_size() == 0 {
            return self.constant;
        }
        self.terms.binary_search_by(|(k, _)| k.cmp(m)).map_or(0.0, |i| self.terms[i].1)
    }

    /// Coefficients `c_i` of the monomials `X_i`.
    pub fn linear_coefficients(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.nvars];
        for (m, v) in &self.terms {
            if m.degree() == 1 {
                c[m.pairs()[0].0 as usize] = *v;
            }
        }
        c
    }

    /// Largest `|c_S|` over terms of degree at least 2.
    pub fn max_nonlinear_coefficient(&self) -> f64 {
        self.terms.iter().filter(|(m, _)| m.degree() >= 2).map(|(_, c)| c.abs()).fold(0.0, f64::max)
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut s = self.constant;
        for (m, c) in &self.terms {
            s += c * m.eval(x);
        }
        s
    }

    /// Splits `P = X_i Q_i + R_i` where `R_i` does not involve `X_i`.
    pub fn partial_derivative(&self, i: usize) -> Result<(SparsePolynomial, SparsePolynomial)> {
        if i >= self.nvars {
            return Err(invalid(format!("variable X_{i} out of range")));
        }
        let mut q = SparsePolynomial::new(self.nvars, 0.0);
        let mut r = SparsePolynomial::new(self.nvars, self.constant);
        for (m, c) in &self.terms {
            if m.contains(i) {
                q.add_term(m.lower(i), *c)?;
            } else {
                r.add_term(m.clone(), *c)?;
            }
        }
        Ok((q, r))
    }

    /// Expands `P(mu (X + 1))` for a degree-one `P`:
    /// each `c_S prod_{S} X` becomes `c_S mu^|S| sum_{T subset S} prod_T X`.
    pub fn substitute_shifted(&self, mu: f64) -> Result<SparsePolynomial> {
        if !self.is_degree_one() {
            return Err(Error::UnsupportedMode("shifted substitution needs a degree-one polynomial".into()));
        }
        let mut acc: BTreeMap<Monomial, f64> = BTreeMap::new();
        let mut constant = self.constant;
        for (m, c) in &self.terms {
            let vars: Vec<usize> = m.vars().collect();
            if vars.len() > 24 {
                return Err(Error::UnsupportedSize("monomial too large to expand".into()));
            }
            let scale = c * mu.powi(vars.len() as i32);
            for mask in 0u32..(1 << vars.len()) {
                let sub: Vec<usize> = (0..vars.len()).filter(|&k| mask >> k & 1 == 1).map(|k| vars[k]).collect();
                if sub.is_empty() {
                    constant += scale;
                } else {
                    *acc.entry(Monomial::from_set(&sub)).or_insert(0.0) += scale;
                }
            }
        }
        SparsePolynomial::from_terms(self.nvars, constant, acc)
    }

    /// `C(S, mu) = sum_{S' containing S} c_{S'} mu^|S'|` for square-free terms.
    pub fn superset_sum(&self, set: &[usize], mu: f64) -> f64 {
        self.terms
            .iter()
            .filter(|(m, _)| set.iter().all(|&v| m.contains(v)))
            .map(|(m, c)| c * mu.powi(m.support_size() as i32))
            .sum()
    }

    /// `c_0 + sum_i q_i(X_i)`: the constant plus every term that involves
    /// a single variable.
    pub fn univariate_part(&self) -> SparsePolynomial {
        SparsePolynomial {
            nvars: self.nvars,
            constant: self.constant,
            terms: self.terms.iter().filter(|(m, _)| m.support_size() == 1).cloned().collect(),
        }
    }

    /// `c_0 + sum_i c_i X_i`.
    pub fn linear_part(&self) -> SparsePolynomial {
        SparsePolynomial {
            nvars: self.nvars,
            constant: self.constant,
            terms: self.terms.iter().filter(|(m, _)| m.degree() == 1).cloned().collect(),
        }
    }

    /// Sum of all coefficients including the constant, i.e. `P(1, ..., 1)`.
    pub fn coefficient_sum(&self) -> f64 {
        self.constant + self.terms.iter().map(|(_, c)| c).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p_x1x2() -> SparsePolynomial {
        SparsePolynomial::from_terms(2, 0.0, [(Monomial::from_set(&[0, 1]), 1.0)]).unwrap()
    }

    #[test]
    fn evaluation() {
        let mut p = SparsePolynomial::new(2, 0.0);
        p.add_term(Monomial::from_set(&[0]), 1.0).unwrap();
        p.add_term(Monomial::from_set(&[0, 1]), 0.5).unwrap();
        assert_eq!(p.eval(&[1.0, 1.0]), 1.5);
        let sq = SparsePolynomial::from_terms(1, 1.0, [(Monomial::new(&[(0, 2)]), 3.0)]).unwrap();
        assert_eq!(sq.eval(&[2.0]), 13.0);
        assert!(!sq.is_degree_one());
    }

    #[test]
    fn merge_and_cancel() {
        let mut p = SparsePolynomial::new(3, 0.0);
        p.add_term(Monomial::from_set(&[2, 0]), 1.0).unwrap();
        p.add_term(Monomial::from_set(&[0, 2]), -1.0).unwrap();
        assert!(p.terms().is_empty());
        assert!(p.add_term(Monomial::from_set(&[3]), 1.0).is_err());
    }

    #[test]
    fn split_on_variable() {
        let p = p_x1x2();
        let (q, r) = p.partial_derivative(0).unwrap();
        assert_eq!(q.coefficient(&Monomial::from_set(&[1])), 1.0);
        assert_eq!(q.terms().len(), 1);
        assert!(r.terms().is_empty());
        assert_eq!(r.constant(), 0.0);
    }

    #[test]
    fn shifted_substitution_of_a_product() {
        let mu = 0.3;
        let s = p_x1x2().substitute_shifted(mu).unwrap();
        let m2 = mu * mu;
        assert!((s.coefficient(&Monomial::from_set(&[0, 1])) - m2).abs() < 1e-15);
        assert!((s.coefficient(&Monomial::from_set(&[0])) - m2).abs() < 1e-15);
        assert!((s.coefficient(&Monomial::from_set(&[1])) - m2).abs() < 1e-15);
        assert!((s.constant() - m2).abs() < 1e-15);
    }

    #[test]
    fn shifted_substitution_needs_degree_one() {
        let sq = SparsePolynomial::from_terms(1, 0.0, [(Monomial::new(&[(0, 2)]), 1.0)]).unwrap();
        assert!(matches!(sq.substitute_shifted(0.5), Err(Error::UnsupportedMode(_))));
    }

    #[test]
    fn union_polynomial_is_boolean_or() {
        let p = SparsePolynomial::union(3).unwrap();
        for mask in 0..8u32 {
            let x: Vec<f64> = (0..3).map(|i| (mask >> i & 1) as f64).collect();
            assert_eq!(p.eval(&x), if mask == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn superset_sums() {
        let p = SparsePolynomial::linear_plus_pairs(3, 0.5);
        let mu = 0.2;
        // X_0 appears in X_0, X_0X_1, X_0X_2
        assert!((p.superset_sum(&[0], mu) - (mu + 0.5 * mu * mu * 2.0)).abs() < 1e-15);
        assert!((p.superset_sum(&[0, 1], mu) - 0.5 * mu * mu).abs() < 1e-15);
    }
}
