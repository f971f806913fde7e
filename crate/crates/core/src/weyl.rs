//! The noncommutative ring `D = K[d_1, ..., d_n]` of linear differential
//! operators with coefficients in the differential field K, operator
//! matrices acting on the left on column vectors of unknowns, and the
//! formal adjoint `ad(P) = (-1)^|mu| d_mu a^mu`.
//!
//! Canonical form: coefficients on the left of the derivative monomials,
//! so `d_i a = a d_i + (d_i a)` is applied during every composition.

use crate::field::{Context, FieldError, Scalar};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

/// A derivative multi-index `mu = (mu_1, ..., mu_n)`.
#[derive(Clone, PartialEq, Eq, Debug, Hash)]
pub struct MultiIndex {
    counts: Vec<u32>,
}

impl MultiIndex {
    pub fn new(counts: Vec<u32>) -> Self {
        MultiIndex { counts }
    }

    pub fn zero(n: usize) -> Self {
        MultiIndex { counts: vec![0; n] }
    }

    /// Single derivative `d_i` (1-based).
    pub fn unit(n: usize, i: usize) -> Self {
        assert!((1..=n).contains(&i));
        let mut counts = vec![0; n];
        counts[i - 1] = 1;
        MultiIndex { counts }
    }

    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn order(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// Class: smallest `i` (1-based) with `mu_i != 0`; `None` for order 0.
    pub fn class(&self) -> Option<usize> {
        self.counts.iter().position(|&c| c > 0).map(|i| i + 1)
    }

    /// `mu + 1_i` (1-based i).
    pub fn up(&self, i: usize) -> MultiIndex {
        let mut c = self.counts.clone();
        c[i - 1] += 1;
        MultiIndex { counts: c }
    }

    /// `mu - 1_i`; `None` if `mu_i = 0`.
    pub fn down(&self, i: usize) -> Option<MultiIndex> {
        if self.counts[i - 1] == 0 {
            return None;
        }
        let mut c = self.counts.clone();
        c[i - 1] -= 1;
        Some(MultiIndex { counts: c })
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex {
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn divides(&self, other: &MultiIndex) -> bool {
        self.counts.iter().zip(&other.counts).all(|(a, b)| a <= b)
    }

    pub fn sub(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert!(other.divides(self));
        MultiIndex {
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a - b).collect(),
        }
    }

    /// Grevlex comparison (degree first).
    pub fn grevlex(&self, other: &MultiIndex) -> std::cmp::Ordering {
        crate::field::poly::grevlex(&self.counts, &other.counts)
    }

    /// Multinomial product of componentwise binomials `C(mu, sigma)`.
    pub fn binomial(&self, sigma: &MultiIndex) -> BigRational {
        let mut acc = BigInt::one();
        for (a, b) in self.counts.iter().zip(&sigma.counts) {
            acc *= binom(*a, *b);
        }
        BigRational::from(acc)
    }

    /// All sigma with `sigma <= mu` componentwise.
    pub fn sub_indices(&self) -> Vec<MultiIndex> {
        let mut out = vec![Vec::new()];
        for &c in &self.counts {
            let mut next = Vec::new();
            for prefix in &out {
                for e in 0..=c {
                    let mut p = prefix.clone();
                    p.push(e);
                    next.push(p);
                }
            }
            out = next;
        }
        out.into_iter().map(MultiIndex::new).collect()
    }

    /// All multi-indices of the given order in n variables.
    pub fn all_of_order(n: usize, order: u32) -> Vec<MultiIndex> {
        fn rec(n: usize, order: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
            if n == 1 {
                let mut p = prefix.clone();
                p.push(order);
                out.push(MultiIndex::new(p));
                return;
            }
            for e in (0..=order).rev() {
                prefix.push(e);
                rec(n - 1, order - e, prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        rec(n, order, &mut Vec::new(), &mut out);
        out.sort_by(|a, b| b.grevlex(a));
        out
    }

    /// All multi-indices of order `<= order`.
    pub fn all_up_to(n: usize, order: u32) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for q in 0..=order {
            out.extend(Self::all_of_order(n, q));
        }
        out
    }
}

fn binom(n: u32, k: u32) -> BigInt {
    if k > n {
        return BigInt::from(0);
    }
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.order() == 0 {
            return write!(f, "1");
        }
        let mut idx = Vec::new();
        for (i, &c) in self.counts.iter().enumerate() {
            for _ in 0..c {
                idx.push((i + 1).to_string());
            }
        }
        write!(f, "d[{}]", idx.join(","))
    }
}

/// Ordering used for deterministic term iteration inside operators.
#[derive(Clone, PartialEq, Eq, Debug, Hash)]
struct MiKey(MultiIndex);

impl PartialOrd for MiKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for MiKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.grevlex(&other.0)
    }
}

/// An element `P = sum a^mu d_mu` of `D`, coefficients on the left.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ScalarOperator {
    ctx: Arc<Context>,
    terms: BTreeMap<MiKey, Scalar>,
}

impl ScalarOperator {
    pub fn zero(ctx: &Arc<Context>) -> Self {
        ScalarOperator { ctx: ctx.clone(), terms: BTreeMap::new() }
    }

    pub fn one(ctx: &Arc<Context>) -> Self {
        Self::from_scalar(Scalar::one(ctx))
    }

    pub fn from_scalar(c: Scalar) -> Self {
        let ctx = c.context().clone();
        Self::monomial(&ctx, MultiIndex::zero(ctx.n()), c)
    }

    pub fn monomial(ctx: &Arc<Context>, mu: MultiIndex, coeff: Scalar) -> Self {
        let mut terms = BTreeMap::new();
        if !coeff.is_zero() {
            terms.insert(MiKey(mu), coeff);
        }
        ScalarOperator { ctx: ctx.clone(), terms }
    }

    /// `d_i` as an operator (1-based).
    pub fn d(ctx: &Arc<Context>, i: usize) -> Self {
        Self::monomial(ctx, MultiIndex::unit(ctx.n(), i), Scalar::one(ctx))
    }

    /// `d_mu` for a list of (possibly repeated) 1-based indices.
    pub fn d_indices(ctx: &Arc<Context>, indices: &[usize]) -> Self {
        let mut mu = MultiIndex::zero(ctx.n());
        for &i in indices {
            mu = mu.up(i);
        }
        Self::monomial(ctx, mu, Scalar::one(ctx))
    }

    pub fn context(&self) -> &Arc<Context> {
        &self.ctx
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Max |mu| over the support; `None` is the zero operator.
    pub fn order(&self) -> Option<u32> {
        self.terms.keys().map(|k| k.0.order()).max()
    }

    pub fn coeff(&self, mu: &MultiIndex) -> Scalar {
        self.terms
            .get(&MiKey(mu.clone()))
            .cloned()
            .unwrap_or_else(|| Scalar::zero(&self.ctx))
    }

    /// Terms in descending grevlex order of the multi-index.
    pub fn terms_desc(&self) -> Vec<(MultiIndex, Scalar)> {
        self.terms
            .iter()
            .rev()
            .map(|(k, c)| (k.0.clone(), c.clone()))
            .collect()
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        for (k, c) in &other.terms {
            match terms.get_mut(k) {
                Some(e) => {
                    let s = e.add(c);
                    if s.is_zero() {
                        terms.remove(k);
                    } else {
                        *e = s;
                    }
                }
                None => {
                    terms.insert(k.clone(), c.clone());
                }
            }
        }
        ScalarOperator { ctx: self.ctx.clone(), terms }
    }

    pub fn neg(&self) -> Self {
        ScalarOperator {
            ctx: self.ctx.clone(),
            terms: self.terms.iter().map(|(k, c)| (k.clone(), c.neg())).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    /// Left multiplication by a scalar (order-zero composition).
    pub fn scale(&self, c: &Scalar) -> Self {
        if c.is_zero() {
            return Self::zero(&self.ctx);
        }
        ScalarOperator {
            ctx: self.ctx.clone(),
            terms: self
                .terms
                .iter()
                .map(|(k, a)| (k.clone(), c.mul(a)))
                .filter(|(_, a)| !a.is_zero())
                .collect(),
        }
    }

    pub fn scale_int(&self, k: i64) -> Self {
        self.scale(&Scalar::from_int(&self.ctx, k))
    }

    /// Composition `self ∘ other`, normal-forming coefficients to the left
    /// with the generalized Leibniz rule
    /// `d_mu ∘ b = sum_{sigma <= mu} C(mu, sigma) (d^{mu-sigma} b) d_sigma`.
    pub fn compose(&self, other: &Self) -> Result<Self, FieldError> {
        let mut acc = Self::zero(&self.ctx);
        for (kmu, a) in &self.terms {
            for (knu, b) in &other.terms {
                let mu = &kmu.0;
                for sigma in mu.sub_indices() {
                    let db = derive_multi(b, &mu.sub(&sigma))?;
                    if db.is_zero() {
                        continue;
                    }
                    let coeff = a
                        .mul(&db)
                        .mul(&Scalar::from_rational(&self.ctx, mu.binomial(&sigma)));
                    let idx = sigma.add(&knu.0);
                    acc = acc.add(&Self::monomial(&self.ctx, idx, coeff));
                }
            }
        }
        Ok(acc)
    }

    /// The formal adjoint `ad(P) = sum (-1)^|mu| d_mu ∘ a^mu`.
    pub fn adjoint(&self) -> Result<Self, FieldError> {
        let mut acc = Self::zero(&self.ctx);
        for (kmu, a) in &self.terms {
            let mu = &kmu.0;
            let sign = if mu.order() % 2 == 0 { 1 } else { -1 };
            let d_mu = Self::monomial(&self.ctx, mu.clone(), Scalar::one(&self.ctx));
            let piece = d_mu.compose(&Self::from_scalar(a.clone()))?;
            acc = acc.add(&piece.scale_int(sign));
        }
        Ok(acc)
    }

    /// Apply to an actual function (a scalar): genuine differentiation.
    pub fn apply_scalar(&self, f: &Scalar) -> Result<Scalar, FieldError> {
        let mut acc = Scalar::zero(&self.ctx);
        for (kmu, a) in &self.terms {
            acc = acc.add(&a.mul(&derive_multi(f, &kmu.0)?));
        }
        Ok(acc)
    }
}

/// Iterated derivation `d^mu f` of a scalar.
pub fn derive_multi(f: &Scalar, mu: &MultiIndex) -> Result<Scalar, FieldError> {
    let mut acc = f.clone();
    for (i, &c) in mu.counts().iter().enumerate() {
        for _ in 0..c {
            if acc.is_zero() {
                return Ok(acc);
            }
            acc = acc.derive(i + 1)?;
        }
    }
    Ok(acc)
}

impl fmt::Display for ScalarOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        for (idx, (mu, c)) in self.terms_desc().into_iter().enumerate() {
            let s = format!("{}", c);
            let (sign, body) = if let Some(rest) = s.strip_prefix('-') {
                if rest.contains(" + ") || rest.contains(" - ") {
                    ("+", format!("({})", s))
                } else {
                    ("-", rest.to_string())
                }
            } else if s.contains(" + ") || s.contains(" - ") {
                ("+", format!("({})", s))
            } else {
                ("+", s)
            };
            if idx == 0 {
                if sign == "-" {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {} ", sign)?;
            }
            if mu.order() == 0 {
                write!(f, "{}", body)?;
            } else if body == "1" {
                write!(f, "{}", mu)?;
            } else {
                write!(f, "{}*{}", body, mu)?;
            }
        }
        Ok(())
    }
}

/// A `rows x cols` matrix over D acting on the left on column vectors of
/// unknowns; the associated differential module is the cokernel of the
/// right action of its rows on row vectors.
#[derive(Clone, PartialEq, Debug)]
pub struct OperatorMatrix {
    ctx: Arc<Context>,
    pub rows: usize,
    pub cols: usize,
    entries: Vec<ScalarOperator>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
}

impl OperatorMatrix {
    pub fn zero(ctx: &Arc<Context>, rows: usize, cols: usize) -> Self {
        OperatorMatrix {
            ctx: ctx.clone(),
            rows,
            cols,
            entries: vec![ScalarOperator::zero(ctx); rows * cols],
            row_labels: (1..=rows).map(|i| format!("eq{}", i)).collect(),
            col_labels: (1..=cols).map(|i| format!("y{}", i)).collect(),
        }
    }

    pub fn identity(ctx: &Arc<Context>, m: usize) -> Self {
        let mut out = Self::zero(ctx, m, m);
        for i in 0..m {
            out.set(i, i, ScalarOperator::one(ctx));
        }
        out
    }

    pub fn from_rows(ctx: &Arc<Context>, rows: Vec<Vec<ScalarOperator>>, cols: usize) -> Self {
        let r = rows.len();
        let mut out = Self::zero(ctx, r, cols);
        for (i, row) in rows.into_iter().enumerate() {
            assert_eq!(row.len(), cols);
            for (j, e) in row.into_iter().enumerate() {
                out.set(i, j, e);
            }
        }
        out
    }

    pub fn context(&self) -> &Arc<Context> {
        &self.ctx
    }

    pub fn at(&self, i: usize, j: usize) -> &ScalarOperator {
        &self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, op: ScalarOperator) {
        self.entries[i * self.cols + j] = op;
    }

    pub fn row(&self, i: usize) -> Vec<ScalarOperator> {
        (0..self.cols).map(|j| self.at(i, j).clone()).collect()
    }

    pub fn with_labels(mut self, rows: Vec<String>, cols: Vec<String>) -> Self {
        assert_eq!(rows.len(), self.rows);
        assert_eq!(cols.len(), self.cols);
        self.row_labels = rows;
        self.col_labels = cols;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| e.is_zero())
    }

    /// Max order over all entries; `None` for the zero matrix.
    pub fn order(&self) -> Option<u32> {
        self.entries.iter().filter_map(|e| e.order()).max()
    }

    /// Matrix composition: `(self ∘ other) xi = self(other(xi))`.
    pub fn compose(&self, other: &Self) -> Result<Self, FieldError> {
        assert_eq!(self.cols, other.rows, "composition shape mismatch");
        let mut out = Self::zero(&self.ctx, self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = ScalarOperator::zero(&self.ctx);
                for k in 0..self.cols {
                    acc = acc.add(&self.at(i, k).compose(other.at(k, j))?);
                }
                out.set(i, j, acc);
            }
        }
        out.row_labels = self.row_labels.clone();
        out.col_labels = other.col_labels.clone();
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(i, j, self.at(i, j).add(other.at(i, j)));
            }
        }
        out
    }

    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            *e = e.neg();
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    /// Formal adjoint: transposed shape, entrywise `ad`, so that
    /// `ad(A ∘ B) = ad(B) ∘ ad(A)` and `ad(ad(A)) = A`.
    pub fn adjoint(&self) -> Result<Self, FieldError> {
        let mut out = Self::zero(&self.ctx, self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.at(i, j).adjoint()?);
            }
        }
        out.row_labels = self.col_labels.iter().map(|l| format!("ad_{}", l)).collect();
        out.col_labels = self.row_labels.iter().map(|l| format!("lam_{}", l)).collect();
        Ok(out)
    }

    /// Apply to a column of actual functions.
    pub fn apply_scalars(&self, fs: &[Scalar]) -> Result<Vec<Scalar>, FieldError> {
        assert_eq!(fs.len(), self.cols);
        let mut out = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let mut acc = Scalar::zero(&self.ctx);
            for j in 0..self.cols {
                acc = acc.add(&self.at(i, j).apply_scalar(&fs[j])?);
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// Apply formally to a jet section: `d_mu y^k` reads the `(k, mu)` slot.
    pub fn apply_section(&self, s: &JetSection) -> Result<Vec<Scalar>, FieldError> {
        assert_eq!(s.m, self.cols);
        let ord = self.order().unwrap_or(0);
        if s.q < ord {
            return Err(FieldError::BadDerivation(ord as usize, s.q as usize));
        }
        let mut out = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let mut acc = Scalar::zero(&self.ctx);
            for j in 0..self.cols {
                for (mu, c) in self.at(i, j).terms_desc() {
                    acc = acc.add(&c.mul(&s.get(j, &mu)));
                }
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// Stack rows of two matrices with the same column space.
    pub fn vstack(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols);
        let mut rows: Vec<Vec<ScalarOperator>> = (0..self.rows).map(|i| self.row(i)).collect();
        rows.extend((0..other.rows).map(|i| other.row(i)));
        let mut out = Self::from_rows(&self.ctx, rows, self.cols);
        out.col_labels = self.col_labels.clone();
        out.row_labels = self
            .row_labels
            .iter()
            .chain(&other.row_labels)
            .cloned()
            .collect();
        out
    }
}

impl fmt::Display for OperatorMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            write!(f, "{}: ", self.row_labels[i])?;
            writeln!(f, "{}", crate::weyl::row_to_string(self, i))?;
        }
        Ok(())
    }
}

/// Render row `i` as an equation-style expression in the column labels.
pub fn row_to_string(m: &OperatorMatrix, i: usize) -> String {
    let mut pieces: Vec<(String, String)> = Vec::new(); // (sign, body)
    for j in 0..m.cols {
        let op = m.at(i, j);
        for (mu, c) in op.terms_desc() {
            let cs = format!("{}", c);
            let (sign, coeff_body) = if let Some(rest) = cs.strip_prefix('-') {
                if rest.contains(" + ") || rest.contains(" - ") {
                    ("+".to_string(), format!("({})", cs))
                } else {
                    ("-".to_string(), rest.to_string())
                }
            } else if cs.contains(" + ") || cs.contains(" - ") {
                ("+".to_string(), format!("({})", cs))
            } else {
                ("+".to_string(), cs)
            };
            let head = if mu.order() == 0 {
                m.col_labels[j].clone()
            } else {
                format!("{}({})", mu, m.col_labels[j])
            };
            let body = if coeff_body == "1" {
                head
            } else {
                format!("{}*{}", coeff_body, head)
            };
            pieces.push((sign, body));
        }
    }
    if pieces.is_empty() {
        return "0".to_string();
    }
    let mut out = String::new();
    for (idx, (sign, body)) in pieces.into_iter().enumerate() {
        if idx == 0 {
            if sign == "-" {
                out.push('-');
            }
        } else {
            out.push_str(if sign == "-" { " - " } else { " + " });
        }
        out.push_str(&body);
    }
    out
}

/// A formal jet section: values `xi^k_mu` for `|mu| <= q`, used for testing
/// operators and the Spencer machinery on concrete data.
#[derive(Clone, Debug, PartialEq)]
pub struct JetSection {
    pub m: usize,
    pub q: u32,
    ctx: Arc<Context>,
    values: BTreeMap<(usize, MiKey), Scalar>,
}

impl JetSection {
    pub fn new(ctx: &Arc<Context>, m: usize, q: u32) -> Self {
        JetSection { m, q, ctx: ctx.clone(), values: BTreeMap::new() }
    }

    pub fn context(&self) -> &Arc<Context> {
        &self.ctx
    }

    pub fn set(&mut self, k: usize, mu: MultiIndex, v: Scalar) {
        assert!(mu.order() <= self.q);
        assert!(k < self.m);
        self.values.insert((k, MiKey(mu)), v);
    }

    pub fn get(&self, k: usize, mu: &MultiIndex) -> Scalar {
        self.values
            .get(&(k, MiKey(mu.clone())))
            .cloned()
            .unwrap_or_else(|| Scalar::zero(&self.ctx))
    }

    /// The holonomic section `j_q(f)`: every slot is the honest derivative.
    pub fn holonomic(ctx: &Arc<Context>, fs: &[Scalar], q: u32) -> Result<Self, FieldError> {
        let mut s = Self::new(ctx, fs.len(), q);
        for (k, f) in fs.iter().enumerate() {
            for mu in MultiIndex::all_up_to(ctx.n(), q) {
                s.set(k, mu.clone(), derive_multi(f, &mu)?);
            }
        }
        Ok(s)
    }
}

/// A bilinear expression `sum c * (d_alpha lambda) (d_beta xi)` in the jets
/// of a test function and a section; the currency of Green's formula.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearForm {
    ctx: Arc<Context>,
    terms: BTreeMap<(MiKey, MiKey), Scalar>,
}

impl BilinearForm {
    pub fn zero(ctx: &Arc<Context>) -> Self {
        BilinearForm { ctx: ctx.clone(), terms: BTreeMap::new() }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, alpha: MultiIndex, beta: MultiIndex, c: Scalar) {
        if c.is_zero() {
            return;
        }
        let key = (MiKey(alpha), MiKey(beta));
        let cur = self.terms.remove(&key);
        let sum = match cur {
            Some(v) => v.add(&c),
            None => c,
        };
        if !sum.is_zero() {
            self.terms.insert(key, sum);
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for ((a, b), c) in &other.terms {
            out.add_term(a.0.clone(), b.0.clone(), c.clone());
        }
        out
    }

    pub fn neg(&self) -> Self {
        BilinearForm {
            ctx: self.ctx.clone(),
            terms: self.terms.iter().map(|(k, c)| (k.clone(), c.neg())).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    /// Formal total derivative `∂_i` (product rule over coefficient and the
    /// two jet factors).
    pub fn total_derivative(&self, i: usize) -> Result<Self, FieldError> {
        let mut out = Self::zero(&self.ctx);
        for ((a, b), c) in &self.terms {
            out.add_term(a.0.clone(), b.0.clone(), c.derive(i)?);
            out.add_term(a.0.up(i), b.0.clone(), c.clone());
            out.add_term(a.0.clone(), b.0.up(i), c.clone());
        }
        Ok(out)
    }

    pub fn terms(&self) -> Vec<(MultiIndex, MultiIndex, Scalar)> {
        self.terms
            .iter()
            .map(|((a, b), c)| (a.0.clone(), b.0.clone(), c.clone()))
            .collect()
    }
}

/// Green's formula for a scalar operator: returns `B_1, ..., B_n` with
/// `lambda (P xi) - (ad(P) lambda) xi = sum_i ∂_i B_i(lambda, xi)`
/// as an identity of bilinear expressions in the jets of lambda and xi.
pub fn green_divergence(p: &ScalarOperator) -> Result<Vec<BilinearForm>, FieldError> {
    let ctx = p.context().clone();
    let n = ctx.n();
    let mut boundary = vec![BilinearForm::zero(&ctx); n];
    // worklist of terms c * (d_alpha lambda)(d_mu xi) still to integrate by parts
    let mut work: Vec<(MultiIndex, MultiIndex, Scalar)> = p
        .terms_desc()
        .into_iter()
        .map(|(mu, c)| (MultiIndex::zero(n), mu, c))
        .collect();
    let mut adjoint_part = BilinearForm::zero(&ctx);
    while let Some((alpha, mu, c)) = work.pop() {
        if c.is_zero() {
            continue;
        }
        match mu.class() {
            None => adjoint_part.add_term(alpha, mu, c),
            Some(i) => {
                let mu_down = mu.down(i).unwrap();
                // c λ_α ξ_{μ} = ∂_i(c λ_α ξ_{μ-1_i}) - (∂_i c) λ_α ξ_{μ-1_i} - c λ_{α+1_i} ξ_{μ-1_i}
                boundary[i - 1].add_term(alpha.clone(), mu_down.clone(), c.clone());
                work.push((alpha.clone(), mu_down.clone(), c.derive(i)?.neg()));
                work.push((alpha.up(i), mu_down, c.neg()));
            }
        }
    }
    // consistency: the residual order-zero-in-xi part is exactly (ad P λ) ξ
    let adp = p.adjoint()?;
    let mut expect = BilinearForm::zero(&ctx);
    for (mu, c) in adp.terms_desc() {
        expect.add_term(mu, MultiIndex::zero(n), c);
    }
    debug_assert_eq!(adjoint_part, expect);
    Ok(boundary)
}

/// Expand `lambda (P xi)` as a bilinear form (for checking Green's formula).
pub fn pairing_form(p: &ScalarOperator) -> BilinearForm {
    let ctx = p.context().clone();
    let n = ctx.n();
    let mut out = BilinearForm::zero(&ctx);
    for (mu, c) in p.terms_desc() {
        out.add_term(MultiIndex::zero(n), mu, c);
    }
    out
}

/// Expand `(ad(P) lambda) xi` as a bilinear form.
pub fn adjoint_pairing_form(p: &ScalarOperator) -> Result<BilinearForm, FieldError> {
    let ctx = p.context().clone();
    let n = ctx.n();
    let mut out = BilinearForm::zero(&ctx);
    for (mu, c) in p.adjoint()?.terms_desc() {
        out.add_term(mu, MultiIndex::zero(n), c);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::OperatorSampler;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx2() -> Arc<Context> {
        Context::new(2)
    }

    #[test]
    fn multiindex_class_convention() {
        let mu = MultiIndex::new(vec![0, 0, 2]);
        assert_eq!(mu.class(), Some(3));
        assert_eq!(MultiIndex::zero(3).class(), None);
        assert_eq!(MultiIndex::new(vec![0, 1, 1]).class(), Some(2));
    }

    #[test]
    fn compose_d_with_coefficient() {
        // d1 ∘ x1 = x1 d1 + 1
        let c = ctx2();
        let d1 = ScalarOperator::d(&c, 1);
        let x1 = ScalarOperator::from_scalar(Scalar::var(&c, 1));
        let p = d1.compose(&x1).unwrap();
        let expect = ScalarOperator::monomial(&c, MultiIndex::unit(2, 1), Scalar::var(&c, 1))
            .add(&ScalarOperator::one(&c));
        assert_eq!(p, expect);
    }

    #[test]
    fn compose_unit_and_constant_commutation() {
        let c = ctx2();
        let p = ScalarOperator::d_indices(&c, &[1, 2]).sub(&ScalarOperator::one(&c));
        let q = ScalarOperator::d_indices(&c, &[2, 2]);
        assert_eq!(p.compose(&ScalarOperator::one(&c)).unwrap(), p);
        // constant coefficients commute
        let lhs = p.compose(&q).unwrap();
        let rhs = q.compose(&p).unwrap();
        assert!(lhs.sub(&rhs).is_zero());
    }

    #[test]
    fn adjoint_of_first_order() {
        let c = ctx2();
        let d1 = ScalarOperator::d(&c, 1);
        assert_eq!(d1.adjoint().unwrap(), d1.neg());
    }

    #[test]
    fn adjoint_matrix_example_310() {
        // D = column (d12 ; d22) on one unknown -> ad(D) = row (d12, d22)
        let c = ctx2();
        let d = OperatorMatrix::from_rows(
            &c,
            vec![
                vec![ScalarOperator::d_indices(&c, &[1, 2])],
                vec![ScalarOperator::d_indices(&c, &[2, 2])],
            ],
            1,
        );
        let ad = d.adjoint().unwrap();
        assert_eq!((ad.rows, ad.cols), (1, 2));
        assert_eq!(*ad.at(0, 0), ScalarOperator::d_indices(&c, &[1, 2]));
        assert_eq!(*ad.at(0, 1), ScalarOperator::d_indices(&c, &[2, 2]));
    }

    #[test]
    fn kalman_adjoint_blocks() {
        // -ydot + A y + B u with m = 2, p = 1 -> adjoint { λdot + λA = 0, λB = 0 }
        let c = Context::with_names(&["t"]);
        let a = [[1i64, 2], [0, 1]];
        let b = [3i64, 5];
        let dt = ScalarOperator::d(&c, 1);
        let mut rows = Vec::new();
        for i in 0..2 {
            let mut row = Vec::new();
            for j in 0..2 {
                let mut e = ScalarOperator::from_scalar(Scalar::from_int(&c, a[i][j]));
                if i == j {
                    e = e.sub(&dt);
                }
                row.push(e);
            }
            row.push(ScalarOperator::from_scalar(Scalar::from_int(&c, b[i])));
            rows.push(row);
        }
        let d = OperatorMatrix::from_rows(&c, rows, 3);
        let ad = d.adjoint().unwrap();
        assert_eq!((ad.rows, ad.cols), (3, 2));
        // y-rows: d_t I + A^T
        for i in 0..2 {
            for j in 0..2 {
                let mut expect = ScalarOperator::from_scalar(Scalar::from_int(&c, a[j][i]));
                if i == j {
                    expect = expect.add(&dt);
                }
                assert_eq!(*ad.at(i, j), expect);
            }
        }
        // u-row: B^T
        for j in 0..2 {
            assert_eq!(
                *ad.at(2, j),
                ScalarOperator::from_scalar(Scalar::from_int(&c, b[j]))
            );
        }
    }

    #[test]
    fn apply_to_functions() {
        let c = ctx2();
        let x1 = Scalar::var(&c, 1);
        let x2 = Scalar::var(&c, 2);
        // apply(d22, y = x2^2) -> 2
        let d22 = ScalarOperator::d_indices(&c, &[2, 2]);
        assert_eq!(
            d22.apply_scalar(&x2.mul(&x2)).unwrap(),
            Scalar::from_int(&c, 2)
        );
        // apply(d12 - 1, y = x1 x2) -> 1 - x1 x2
        let p = ScalarOperator::d_indices(&c, &[1, 2]).sub(&ScalarOperator::one(&c));
        assert_eq!(
            p.apply_scalar(&x1.mul(&x2)).unwrap(),
            Scalar::one(&c).sub(&x1.mul(&x2))
        );
    }

    #[test]
    fn killing_kernel_contains_rotation() {
        // euclidean Killing rows applied to the rotation field (-x2, x1)
        let c = ctx2();
        let d1 = ScalarOperator::d(&c, 1);
        let d2 = ScalarOperator::d(&c, 2);
        let z = ScalarOperator::zero(&c);
        let killing = OperatorMatrix::from_rows(
            &c,
            vec![
                vec![d1.scale_int(2), z.clone()],
                vec![d2.clone(), d1.clone()],
                vec![z.clone(), d2.scale_int(2)],
            ],
            2,
        );
        let rot = vec![Scalar::var(&c, 2).neg(), Scalar::var(&c, 1)];
        let out = killing.apply_scalars(&rot).unwrap();
        assert!(out.iter().all(|s| s.is_zero()));
    }

    #[test]
    fn green_divergence_simple() {
        let c = ctx2();
        let n = 2;
        // P = d1: B1 = λ ξ
        let b = green_divergence(&ScalarOperator::d(&c, 1)).unwrap();
        let mut expect = BilinearForm::zero(&c);
        expect.add_term(MultiIndex::zero(n), MultiIndex::zero(n), Scalar::one(&c));
        assert_eq!(b[0], expect);
        assert!(b[1].is_zero());
        // P of order 0: no boundary term
        let b0 = green_divergence(&ScalarOperator::from_scalar(Scalar::var(&c, 1))).unwrap();
        assert!(b0.iter().all(|f| f.is_zero()));
        // P = d11: B1 = λ ξ_1 - λ_1 ξ
        let b11 = green_divergence(&ScalarOperator::d_indices(&c, &[1, 1])).unwrap();
        let mut expect11 = BilinearForm::zero(&c);
        expect11.add_term(MultiIndex::zero(n), MultiIndex::unit(n, 1), Scalar::one(&c));
        expect11.add_term(
            MultiIndex::unit(n, 1),
            MultiIndex::zero(n),
            Scalar::from_int(&c, -1),
        );
        assert_eq!(b11[0], expect11);
    }

    fn check_green_identity(p: &ScalarOperator) {
        let ctx = p.context().clone();
        let b = green_divergence(p).unwrap();
        let mut rhs = adjoint_pairing_form(p).unwrap();
        for (i, bi) in b.iter().enumerate() {
            rhs = rhs.add(&bi.total_derivative(i + 1).unwrap());
        }
        assert_eq!(pairing_form(p), rhs);
    }

    #[test]
    fn green_identity_randomized() {
        let c = ctx2();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let sampler = OperatorSampler::new(&c, 2);
        for _ in 0..25 {
            let p = sampler.sample(&mut rng);
            check_green_identity(&p);
        }
    }

    #[test]
    fn adjoint_involution_and_antihomomorphism() {
        // 200 randomized pairs, order <= 3, n <= 3
        for n in 2..=3usize {
            let c = Context::new(n);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + n as u64);
            let sampler = OperatorSampler::new(&c, 3);
            for _ in 0..100 {
                let p = sampler.sample(&mut rng);
                let q = sampler.sample(&mut rng);
                let pq = p.compose(&q).unwrap();
                let ad_pq = pq.adjoint().unwrap();
                let ad_q_ad_p = q.adjoint().unwrap().compose(&p.adjoint().unwrap()).unwrap();
                assert_eq!(ad_pq, ad_q_ad_p);
                assert_eq!(p.adjoint().unwrap().adjoint().unwrap(), p);
            }
        }
    }

    #[test]
    fn adjoint_laws_with_fraction_coefficients() {
        let c = ctx2();
        let mut rng = ChaCha8Rng::seed_from_u64(321);
        let mut sampler = OperatorSampler::new(&c, 2);
        sampler.scalars.fraction_prob = 0.5;
        sampler.scalars.max_degree = 1;
        for _ in 0..10 {
            let p = sampler.sample(&mut rng);
            let q = sampler.sample(&mut rng);
            let ad_pq = p.compose(&q).unwrap().adjoint().unwrap();
            let ad_q_ad_p = q.adjoint().unwrap().compose(&p.adjoint().unwrap()).unwrap();
            assert_eq!(ad_pq, ad_q_ad_p);
            assert_eq!(p.adjoint().unwrap().adjoint().unwrap(), p);
        }
    }

    #[test]
    fn compose_associativity_randomized() {
        let c = ctx2();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let sampler = OperatorSampler::new(&c, 2);
        for _ in 0..20 {
            let p = sampler.sample(&mut rng);
            let q = sampler.sample(&mut rng);
            let r = sampler.sample(&mut rng);
            let lhs = p.compose(&q).unwrap().compose(&r).unwrap();
            let rhs = p.compose(&q.compose(&r).unwrap()).unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn order_adds_under_composition() {
        let c = ctx2();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let sampler = OperatorSampler::new(&c, 3);
        for _ in 0..30 {
            let p = sampler.sample(&mut rng);
            let q = sampler.sample(&mut rng);
            if p.is_zero() || q.is_zero() {
                continue;
            }
            let pq = p.compose(&q).unwrap();
            assert_eq!(pq.order(), Some(p.order().unwrap() + q.order().unwrap()));
        }
    }
}

#[cfg(test)]
mod debug_probe {
    use super::*;
    use crate::sample::OperatorSampler;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn probe_fraction_compose() {
        let c = Context::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(321);
        let mut sampler = OperatorSampler::new(&c, 2);
        sampler.scalars.fraction_prob = 0.5;
        sampler.scalars.max_degree = 1;
        for it in 0..10 {
            let p = sampler.sample(&mut rng);
            let q = sampler.sample(&mut rng);
            eprintln!("iter {} p={} q={}", it, p, q);
            let pq = p.compose(&q).unwrap();
            eprintln!("  composed");
            let _ad = pq.adjoint().unwrap();
            eprintln!("  adjointed");
        }
    }
}
