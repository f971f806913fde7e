//! The differential coefficient field `K = Q(x_1, ..., x_n; constants;
//! parameter jets)` with `n` commuting derivations.
//!
//! A [`Scalar`] is a reduced fraction of multivariate polynomials over Q in
//! the independent variables, declared symbolic constants, and truncated
//! parameter-jet symbols. Canonical form: `gcd(num, den) = 1` and the
//! denominator is monic under grevlex, so equality is a syntactic check.
//! Derivations satisfy the Leibniz and quotient rules; jets chain as
//! `∂(a^(k)) = a^(k+1)` along their base derivation, and differentiating the
//! top jet of a truncated chain is a hard error, never a silent truncation.

pub mod poly;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use poly::{Poly, SymDeriv};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("division by zero scalar")]
    DivisionByZero,
    #[error("derivation of parameter `{param}` past truncation order {order}")]
    TruncationExceeded { param: String, order: usize },
    #[error("denominator vanishes at the evaluation point")]
    Pole,
    #[error("no value assigned to symbol `{0}`")]
    MissingAssignment(String),
    #[error("scalars belong to different contexts")]
    ContextMismatch,
    #[error("derivation index {0} out of range 1..={1}")]
    BadDerivation(usize, usize),
}

/// A truncated jet chain `a^(0), ..., a^(N)` driven by one derivation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterSpec {
    pub name: String,
    /// Truncation order N; the chain has N+1 symbols.
    pub truncation: usize,
    /// 1-based derivation index that advances the chain.
    pub base: usize,
}

/// Symbol table and derivation rules shared by all scalars of a computation.
#[derive(Debug, PartialEq, Eq)]
pub struct Context {
    vars: Vec<String>,
    consts: Vec<String>,
    params: Vec<ParameterSpec>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum SymbolKind {
    Var(usize),
    Const(usize),
    /// (param index, jet order)
    Jet(usize, usize),
}

impl Context {
    pub fn new(n: usize) -> Arc<Self> {
        let vars = (1..=n).map(|i| format!("x{}", i)).collect();
        Arc::new(Context { vars, consts: Vec::new(), params: Vec::new() })
    }

    pub fn with_names(vars: &[&str]) -> Arc<Self> {
        Arc::new(Context {
            vars: vars.iter().map(|s| s.to_string()).collect(),
            consts: Vec::new(),
            params: Vec::new(),
        })
    }

    pub fn builder(vars: &[&str]) -> ContextBuilder {
        ContextBuilder {
            vars: vars.iter().map(|s| s.to_string()).collect(),
            consts: Vec::new(),
            params: Vec::new(),
        }
    }

    /// Number of independent variables (= number of derivations).
    pub fn n(&self) -> usize {
        self.vars.len()
    }

    pub fn var_names(&self) -> &[String] {
        &self.vars
    }

    pub fn params(&self) -> &[ParameterSpec] {
        &self.params
    }

    pub fn num_symbols(&self) -> usize {
        self.vars.len()
            + self.consts.len()
            + self.params.iter().map(|p| p.truncation + 1).sum::<usize>()
    }

    fn kind(&self, id: usize) -> SymbolKind {
        let nv = self.vars.len();
        let nc = self.consts.len();
        if id < nv {
            return SymbolKind::Var(id);
        }
        if id < nv + nc {
            return SymbolKind::Const(id - nv);
        }
        let mut rest = id - nv - nc;
        for (pi, p) in self.params.iter().enumerate() {
            if rest <= p.truncation {
                return SymbolKind::Jet(pi, rest);
            }
            rest -= p.truncation + 1;
        }
        panic!("symbol id {} out of range", id);
    }

    pub fn symbol_name(&self, id: usize) -> String {
        match self.kind(id) {
            SymbolKind::Var(i) => self.vars[i].clone(),
            SymbolKind::Const(i) => self.consts[i].clone(),
            SymbolKind::Jet(pi, k) => {
                let name = &self.params[pi].name;
                match k {
                    0 => name.clone(),
                    1..=3 => format!("{}{}", name, "'".repeat(k)),
                    _ => format!("{}^({})", name, k),
                }
            }
        }
    }

    pub fn lookup_symbol(&self, name: &str) -> Option<usize> {
        (0..self.num_symbols()).find(|&id| self.symbol_name(id) == name)
    }

    fn var_id(&self, i: usize) -> usize {
        assert!((1..=self.vars.len()).contains(&i));
        i - 1
    }

    pub fn const_id(&self, name: &str) -> Option<usize> {
        self.consts
            .iter()
            .position(|c| c == name)
            .map(|i| self.vars.len() + i)
    }

    pub fn jet_id(&self, param: &str, k: usize) -> Option<usize> {
        let mut base = self.vars.len() + self.consts.len();
        for p in &self.params {
            if p.name == param {
                if k <= p.truncation {
                    return Some(base + k);
                }
                return None;
            }
            base += p.truncation + 1;
        }
        None
    }

    /// Derivation rule for `d_i` (1-based) applied to a bare symbol.
    fn deriv_rule(&self, i: usize, id: usize) -> Result<SymDeriv, FieldError> {
        if i == 0 || i > self.vars.len() {
            return Err(FieldError::BadDerivation(i, self.vars.len()));
        }
        Ok(match self.kind(id) {
            SymbolKind::Var(v) => {
                if v == i - 1 {
                    SymDeriv::One
                } else {
                    SymDeriv::Zero
                }
            }
            SymbolKind::Const(_) => SymDeriv::Zero,
            SymbolKind::Jet(pi, k) => {
                let p = &self.params[pi];
                if p.base != i {
                    SymDeriv::Zero
                } else if k < p.truncation {
                    SymDeriv::Sym(id + 1)
                } else {
                    return Err(FieldError::TruncationExceeded {
                        param: p.name.clone(),
                        order: p.truncation,
                    });
                }
            }
        })
    }
}

/// Builds a context with constants and parameter-jet chains.
pub struct ContextBuilder {
    vars: Vec<String>,
    consts: Vec<String>,
    params: Vec<ParameterSpec>,
}

impl ContextBuilder {
    pub fn constant(mut self, name: &str) -> Self {
        self.consts.push(name.to_string());
        self
    }

    /// Declare a parameter jet chain; default truncation is 8.
    pub fn parameter(mut self, name: &str, truncation: usize, base: usize) -> Self {
        self.params.push(ParameterSpec { name: name.to_string(), truncation, base });
        self
    }

    pub fn build(self) -> Arc<Context> {
        Arc::new(Context { vars: self.vars, consts: self.consts, params: self.params })
    }
}

/// An element of the differential field `K`, kept in canonical reduced form.
#[derive(Clone, Debug)]
pub struct Scalar {
    ctx: Arc<Context>,
    num: Poly,
    den: Poly,
}

impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        *self.ctx == *other.ctx && self.num == other.num && self.den == other.den
    }
}
impl Eq for Scalar {}

impl Scalar {
    fn make(ctx: Arc<Context>, num: Poly, den: Poly) -> Scalar {
        assert!(!den.is_zero(), "zero denominator");
        if num.is_zero() {
            let ns = ctx.num_symbols();
            return Scalar { ctx, num: Poly::zero(ns), den: Poly::one(ns) };
        }
        if let Some(c) = den.as_constant() {
            let ns = ctx.num_symbols();
            return Scalar { ctx, num: num.scale(&c.recip()), den: Poly::one(ns) };
        }
        let g = poly::gcd(&num, &den);
        let (num, den) = if g.is_one() {
            (num, den)
        } else {
            (num.divexact(&g), den.divexact(&g))
        };
        // canonical form: monic denominator
        let (lc, den) = den.monic();
        let num = num.scale(&lc.recip());
        Scalar { ctx, num, den }
    }

    pub fn zero(ctx: &Arc<Context>) -> Scalar {
        let ns = ctx.num_symbols();
        Scalar { ctx: ctx.clone(), num: Poly::zero(ns), den: Poly::one(ns) }
    }

    pub fn one(ctx: &Arc<Context>) -> Scalar {
        Self::from_rational(ctx, BigRational::one())
    }

    pub fn from_int(ctx: &Arc<Context>, k: i64) -> Scalar {
        Self::from_rational(ctx, BigRational::from(BigInt::from(k)))
    }

    pub fn from_ratio(ctx: &Arc<Context>, p: i64, q: i64) -> Scalar {
        assert!(q != 0);
        Self::from_rational(ctx, BigRational::new(BigInt::from(p), BigInt::from(q)))
    }

    pub fn from_rational(ctx: &Arc<Context>, c: BigRational) -> Scalar {
        let ns = ctx.num_symbols();
        Scalar { ctx: ctx.clone(), num: Poly::constant(ns, c), den: Poly::one(ns) }
    }

    /// The independent variable `x_i` (1-based).
    pub fn var(ctx: &Arc<Context>, i: usize) -> Scalar {
        let id = ctx.var_id(i);
        let ns = ctx.num_symbols();
        Scalar { ctx: ctx.clone(), num: Poly::symbol(ns, id), den: Poly::one(ns) }
    }

    pub fn constant_symbol(ctx: &Arc<Context>, name: &str) -> Scalar {
        let id = ctx.const_id(name).unwrap_or_else(|| panic!("unknown constant `{}`", name));
        let ns = ctx.num_symbols();
        Scalar { ctx: ctx.clone(), num: Poly::symbol(ns, id), den: Poly::one(ns) }
    }

    /// Jet symbol `a^(k)` of a declared parameter.
    pub fn jet(ctx: &Arc<Context>, param: &str, k: usize) -> Scalar {
        let id = ctx
            .jet_id(param, k)
            .unwrap_or_else(|| panic!("unknown jet `{}^({})`", param, k));
        let ns = ctx.num_symbols();
        Scalar { ctx: ctx.clone(), num: Poly::symbol(ns, id), den: Poly::one(ns) }
    }

    pub fn context(&self) -> &Arc<Context> {
        &self.ctx
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.num.is_one() && self.den.is_one()
    }

    /// `Some(c)` when the scalar is a rational constant.
    pub fn as_rational(&self) -> Option<BigRational> {
        if !self.den.is_one() {
            return None;
        }
        self.num.as_constant()
    }

    /// True when no symbol occurs (a rational number).
    pub fn is_rational_constant(&self) -> bool {
        self.as_rational().is_some()
    }

    fn check_ctx(&self, other: &Scalar) {
        assert!(
            *self.ctx == *other.ctx,
            "scalar operation across different contexts"
        );
    }

    pub fn add(&self, other: &Scalar) -> Scalar {
        self.check_ctx(other);
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        if self.den.is_one() && other.den.is_one() {
            let num = self.num.add(&other.num);
            let den = Poly::one(self.ctx.num_symbols());
            return Scalar { ctx: self.ctx.clone(), num, den };
        }
        let num = self.num.mul(&other.den).add(&other.num.mul(&self.den));
        let den = self.den.mul(&other.den);
        Scalar::make(self.ctx.clone(), num, den)
    }

    pub fn sub(&self, other: &Scalar) -> Scalar {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Scalar {
        Scalar { ctx: self.ctx.clone(), num: self.num.neg(), den: self.den.clone() }
    }

    pub fn mul(&self, other: &Scalar) -> Scalar {
        self.check_ctx(other);
        if self.is_zero() || other.is_zero() {
            return Scalar::zero(&self.ctx);
        }
        if self.is_one() {
            return other.clone();
        }
        if other.is_one() {
            return self.clone();
        }
        if self.den.is_one() && other.den.is_one() {
            let num = self.num.mul(&other.num);
            let den = Poly::one(self.ctx.num_symbols());
            return Scalar { ctx: self.ctx.clone(), num, den };
        }
        // cross-cancel before multiplying out
        let g1 = poly::gcd(&self.num, &other.den);
        let g2 = poly::gcd(&other.num, &self.den);
        let n1 = if g1.is_one() { self.num.clone() } else { self.num.divexact(&g1) };
        let d2 = if g1.is_one() { other.den.clone() } else { other.den.divexact(&g1) };
        let n2 = if g2.is_one() { other.num.clone() } else { other.num.divexact(&g2) };
        let d1 = if g2.is_one() { self.den.clone() } else { self.den.divexact(&g2) };
        Scalar::make(self.ctx.clone(), n1.mul(&n2), d1.mul(&d2))
    }

    pub fn try_div(&self, other: &Scalar) -> Result<Scalar, FieldError> {
        self.check_ctx(other);
        if other.is_zero() {
            return Err(FieldError::DivisionByZero);
        }
        Ok(Scalar::make(
            self.ctx.clone(),
            self.num.mul(&other.den),
            self.den.mul(&other.num),
        ))
    }

    pub fn div(&self, other: &Scalar) -> Scalar {
        self.try_div(other).expect("division by zero scalar")
    }

    pub fn inv(&self) -> Scalar {
        Scalar::one(&self.ctx).div(self)
    }

    pub fn scale_int(&self, k: i64) -> Scalar {
        self.mul(&Scalar::from_int(&self.ctx, k))
    }

    /// Apply the derivation `d_i` (1-based), with the quotient rule.
    pub fn derive(&self, i: usize) -> Result<Scalar, FieldError> {
        let mut rule = |id: usize| self.ctx.deriv_rule(i, id);
        let dn = self.num.derive(&mut rule)?;
        let dd = self.den.derive(&mut rule)?;
        // (n' d - n d') / d^2
        let num = dn.mul(&self.den).sub(&self.num.mul(&dd));
        let den = self.den.mul(&self.den);
        Ok(Scalar::make(self.ctx.clone(), num, den))
    }

    /// Exact evaluation at a full assignment of rationals to symbols.
    pub fn eval(&self, point: &BTreeMap<usize, BigRational>) -> Result<BigRational, FieldError> {
        let ns = self.ctx.num_symbols();
        let mut vals = Vec::with_capacity(ns);
        let mut needed = vec![false; ns];
        for id in self.num.support().into_iter().chain(self.den.support()) {
            needed[id] = true;
        }
        for id in 0..ns {
            match point.get(&id) {
                Some(v) => vals.push(v.clone()),
                None if needed[id] => {
                    return Err(FieldError::MissingAssignment(self.ctx.symbol_name(id)))
                }
                None => vals.push(BigRational::zero()),
            }
        }
        let d = self.den.eval(&vals);
        if d.is_zero() {
            return Err(FieldError::Pole);
        }
        Ok(self.num.eval(&vals) / d)
    }

    /// Substitute polynomial images for the symbols (linear changes of
    /// variables, specialization of constants). Fails on a vanishing
    /// denominator image.
    pub fn substitute_symbols(
        &self,
        ctx: &Arc<Context>,
        images: &[Scalar],
    ) -> Result<Scalar, FieldError> {
        // all images must be polynomial (denominator 1) for this entry point
        let polys: Vec<Poly> = images
            .iter()
            .map(|s| {
                assert!(s.den.is_one(), "substitute_symbols expects polynomial images");
                s.num.clone()
            })
            .collect();
        let num = self.num.substitute(&polys);
        let den = self.den.substitute(&polys);
        if den.is_zero() {
            return Err(FieldError::DivisionByZero);
        }
        Ok(Scalar::make(ctx.clone(), num, den))
    }

    /// Numerator in integer-primitive form (used for obstruction reporting).
    pub fn numerator_primitive(&self) -> Scalar {
        let (_, prim) = self.num.primitive();
        Scalar { ctx: self.ctx.clone(), num: prim, den: Poly::one(self.ctx.num_symbols()) }
    }

    /// Strip single-symbol (monomial) factors from a polynomial scalar and
    /// normalize the sign; used to report obstructions like `l2 - l1` without
    /// the generically nonzero pivot factors.
    pub fn strip_monomial_factors(&self) -> Scalar {
        if self.is_zero() {
            return self.clone();
        }
        let (_, mut p) = self.num.primitive();
        // divide out any symbol that appears in every term
        for id in 0..self.ctx.num_symbols() {
            loop {
                let min_e = p.terms.iter().map(|(m, _)| m[id]).min().unwrap_or(0);
                if min_e == 0 {
                    break;
                }
                let sym = Poly::symbol(self.ctx.num_symbols(), id);
                p = p.divexact(&sym);
            }
        }
        let (_, p) = p.primitive();
        Scalar { ctx: self.ctx.clone(), num: p, den: Poly::one(self.ctx.num_symbols()) }
    }

    fn fmt_poly(&self, p: &Poly, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if p.is_zero() {
            return write!(f, "0");
        }
        for (idx, (m, c)) in p.terms.iter().enumerate() {
            let neg = c.is_negative();
            let mag = if neg { -c.clone() } else { c.clone() };
            if idx == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mut factors: Vec<String> = Vec::new();
            if !mag.is_one() || poly::mono_deg(m) == 0 {
                if mag.is_integer() {
                    factors.push(mag.numer().to_string());
                } else {
                    factors.push(format!("{}/{}", mag.numer(), mag.denom()));
                }
            }
            for (id, &e) in m.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let name = self.ctx.symbol_name(id);
                if e == 1 {
                    factors.push(name);
                } else {
                    factors.push(format!("{}^{}", name, e));
                }
            }
            write!(f, "{}", factors.join("*"))?;
        }
        Ok(())
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den.is_one() {
            self.fmt_poly(&self.num, f)
        } else {
            write!(f, "(")?;
            self.fmt_poly(&self.num, f)?;
            write!(f, ")/(")?;
            self.fmt_poly(&self.den, f)?;
            write!(f, ")")
        }
    }
}

macro_rules! scalar_binop {
    ($trait:ident, $method:ident) => {
        impl std::ops::$trait for &Scalar {
            type Output = Scalar;
            fn $method(self, rhs: &Scalar) -> Scalar {
                Scalar::$method(self, rhs)
            }
        }
        impl std::ops::$trait for Scalar {
            type Output = Scalar;
            fn $method(self, rhs: Scalar) -> Scalar {
                Scalar::$method(&self, &rhs)
            }
        }
    };
}
scalar_binop!(Add, add);
scalar_binop!(Sub, sub);
scalar_binop!(Mul, mul);
scalar_binop!(Div, div);

impl std::ops::Neg for &Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar::neg(self)
    }
}
impl std::ops::Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar::neg(&self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::ScalarSampler;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx2() -> Arc<Context> {
        Context::new(2)
    }

    #[test]
    fn inverse_law() {
        let c = ctx2();
        let x1 = Scalar::var(&c, 1);
        let inv = Scalar::one(&c).div(&x1);
        assert!(inv.mul(&x1).is_one());
    }

    #[test]
    fn additive_inverse() {
        let c = ctx2();
        let x1 = Scalar::var(&c, 1);
        assert!(x1.add(&x1.neg()).is_zero());
    }

    #[test]
    fn normalization_cancels_gcd() {
        // (x1^2 - 1)/(x1 - 1) -> x1 + 1, checked by multiplying back
        let c = ctx2();
        let x1 = Scalar::var(&c, 1);
        let one = Scalar::one(&c);
        let num = x1.mul(&x1).sub(&one);
        let den = x1.sub(&one);
        let s = num.div(&den);
        assert_eq!(s, x1.add(&one));
        assert_eq!(s.mul(&den), num);
    }

    #[test]
    fn quotient_rule() {
        let c = ctx2();
        let x1 = Scalar::var(&c, 1);
        let inv = x1.inv();
        let d = inv.derive(1).unwrap();
        // -1/x1^2
        let expect = Scalar::from_int(&c, -1).div(&x1.mul(&x1));
        assert_eq!(d, expect);
        assert!(Scalar::var(&c, 1).derive(2).unwrap().is_zero());
    }

    #[test]
    fn jet_chain_leibniz_and_truncation() {
        let c = Context::builder(&["t"]).parameter("a", 2, 1).build();
        let a = Scalar::jet(&c, "a", 0);
        let d = a.mul(&a).derive(1).unwrap();
        let expect = a.mul(&Scalar::jet(&c, "a", 1)).scale_int(2);
        assert_eq!(d, expect);
        let top = Scalar::jet(&c, "a", 2);
        assert!(matches!(
            top.derive(1),
            Err(FieldError::TruncationExceeded { .. })
        ));
    }

    #[test]
    fn eval_and_pole() {
        let c = ctx2();
        let x1 = Scalar::var(&c, 1);
        let x2 = Scalar::var(&c, 2);
        let mut pt = BTreeMap::new();
        pt.insert(0usize, BigRational::from(BigInt::from(2)));
        pt.insert(1usize, BigRational::from(BigInt::from(-1)));
        assert_eq!(
            x1.inv().eval(&pt).unwrap(),
            BigRational::new(BigInt::from(1), BigInt::from(2))
        );
        let mut pt2 = BTreeMap::new();
        pt2.insert(0usize, BigRational::one());
        pt2.insert(1usize, BigRational::from(BigInt::from(-1)));
        assert!(x1.add(&x2).eval(&pt2).unwrap().is_zero());
        let pole = Scalar::one(&c).div(&x1.sub(&Scalar::one(&c)));
        let mut at_one = BTreeMap::new();
        at_one.insert(0usize, BigRational::one());
        at_one.insert(1usize, BigRational::zero());
        assert_eq!(pole.eval(&at_one), Err(FieldError::Pole));
    }

    #[test]
    fn field_axioms_randomized() {
        let c = ctx2();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sampler = ScalarSampler::new(&c);
        for _ in 0..40 {
            let a = sampler.sample(&mut rng);
            let b = sampler.sample(&mut rng);
            let d = sampler.sample(&mut rng);
            assert_eq!(a.add(&b).add(&d), a.add(&b.add(&d)));
            assert_eq!(a.mul(&b).mul(&d), a.mul(&b.mul(&d)));
            assert_eq!(a.mul(&b.add(&d)), a.mul(&b).add(&a.mul(&d)));
            if !a.is_zero() {
                assert!(a.mul(&a.inv()).is_one());
            }
        }
    }

    #[test]
    fn derivations_commute_randomized() {
        let c = ctx2();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sampler = ScalarSampler::new(&c);
        for _ in 0..30 {
            let s = sampler.sample(&mut rng);
            let d12 = s.derive(1).unwrap().derive(2).unwrap();
            let d21 = s.derive(2).unwrap().derive(1).unwrap();
            assert_eq!(d12, d21);
        }
    }

    #[test]
    fn normalize_is_idempotent() {
        let c = ctx2();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let sampler = ScalarSampler::new(&c);
        for _ in 0..30 {
            let s = sampler.sample(&mut rng);
            // re-running the constructor on the canonical parts is a no-op
            let again = Scalar::make(s.ctx.clone(), s.num.clone(), s.den.clone());
            assert_eq!(s, again);
        }
    }
}
