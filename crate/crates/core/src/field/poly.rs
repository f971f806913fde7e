//! Sparse multivariate polynomials over the rationals.
//!
//! This is the substrate for [`super::Scalar`]: exponent vectors over a fixed
//! symbol table, graded reverse lexicographic term order, exact division and
//! a primitive-PRS gcd. Everything here is context-free; the symbol table and
//! the derivation rules live in [`super::Context`].

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use std::cmp::Ordering;

/// Exponent vector; index = symbol id, length = symbol count of the context.
pub type Mono = Vec<u32>;

pub fn mono_deg(m: &Mono) -> u32 {
    m.iter().sum()
}

/// Graded reverse lexicographic order. `Greater` means "larger term".
pub fn grevlex(a: &Mono, b: &Mono) -> Ordering {
    match mono_deg(a).cmp(&mono_deg(b)) {
        Ordering::Equal => {}
        o => return o,
    }
    for i in (0..a.len()).rev() {
        if a[i] != b[i] {
            // smaller exponent in the last differing slot wins
            return b[i].cmp(&a[i]);
        }
    }
    Ordering::Equal
}

fn mono_mul(a: &Mono, b: &Mono) -> Mono {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn mono_divides(a: &Mono, b: &Mono) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

fn mono_div(a: &Mono, b: &Mono) -> Mono {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// How a single symbol differentiates. Jets chain to other symbols.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SymDeriv {
    Zero,
    One,
    Sym(usize),
}

/// A polynomial: terms sorted descending under grevlex, no zero coefficients.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Poly {
    pub nsyms: usize,
    pub terms: Vec<(Mono, BigRational)>,
}

impl Poly {
    pub fn zero(nsyms: usize) -> Self {
        Poly { nsyms, terms: Vec::new() }
    }

    pub fn constant(nsyms: usize, c: BigRational) -> Self {
        if c.is_zero() {
            return Self::zero(nsyms);
        }
        Poly { nsyms, terms: vec![(vec![0; nsyms], c)] }
    }

    pub fn one(nsyms: usize) -> Self {
        Self::constant(nsyms, BigRational::one())
    }

    pub fn symbol(nsyms: usize, id: usize) -> Self {
        let mut m = vec![0; nsyms];
        m[id] = 1;
        Poly { nsyms, terms: vec![(m, BigRational::one())] }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.terms.len() == 1 && mono_deg(&self.terms[0].0) == 0 && self.terms[0].1.is_one()
    }

    /// Total degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.iter().map(|(m, _)| mono_deg(m)).max()
    }

    pub fn as_constant(&self) -> Option<BigRational> {
        if self.is_zero() {
            return Some(BigRational::zero());
        }
        if self.terms.len() == 1 && mono_deg(&self.terms[0].0) == 0 {
            return Some(self.terms[0].1.clone());
        }
        None
    }

    pub fn leading(&self) -> Option<(&Mono, &BigRational)> {
        self.terms.first().map(|(m, c)| (m, c))
    }

    /// Rebuild the canonical sorted form from arbitrary (mono, coeff) pairs.
    fn from_pairs(nsyms: usize, pairs: impl IntoIterator<Item = (Mono, BigRational)>) -> Self {
        let mut map: std::collections::BTreeMap<Mono, BigRational> = Default::default();
        for (m, c) in pairs {
            if c.is_zero() {
                continue;
            }
            let e = map.entry(m).or_insert_with(BigRational::zero);
            *e += c;
        }
        let mut terms: Vec<(Mono, BigRational)> =
            map.into_iter().filter(|(_, c)| !c.is_zero()).collect();
        terms.sort_by(|(a, _), (b, _)| grevlex(b, a));
        Poly { nsyms, terms }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        debug_assert_eq!(self.nsyms, other.nsyms);
        Poly::from_pairs(
            self.nsyms,
            self.terms.iter().cloned().chain(other.terms.iter().cloned()),
        )
    }

    pub fn neg(&self) -> Poly {
        Poly {
            nsyms: self.nsyms,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c.clone())).collect(),
        }
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        if self.is_zero() || other.is_zero() {
            return Poly::zero(self.nsyms);
        }
        Poly::from_pairs(
            self.nsyms,
            self.terms.iter().flat_map(|(m1, c1)| {
                other.terms.iter().map(move |(m2, c2)| (mono_mul(m1, m2), c1 * c2))
            }),
        )
    }

    pub fn scale(&self, c: &BigRational) -> Poly {
        if c.is_zero() {
            return Poly::zero(self.nsyms);
        }
        Poly {
            nsyms: self.nsyms,
            terms: self.terms.iter().map(|(m, k)| (m.clone(), k * c)).collect(),
        }
    }

    pub fn pow(&self, e: u32) -> Poly {
        let mut acc = Poly::one(self.nsyms);
        for _ in 0..e {
            acc = acc.mul(self);
        }
        acc
    }

    /// Exact division; panics if `other` does not divide `self`.
    pub fn divexact(&self, other: &Poly) -> Poly {
        assert!(!other.is_zero(), "division by zero polynomial");
        let mut rem = self.clone();
        let mut quo: Vec<(Mono, BigRational)> = Vec::new();
        let (lm, lc) = (other.terms[0].0.clone(), other.terms[0].1.clone());
        while !rem.is_zero() {
            let (rm, rc) = (rem.terms[0].0.clone(), rem.terms[0].1.clone());
            assert!(
                mono_divides(&lm, &rm),
                "divexact: leading monomial does not divide"
            );
            let qm = mono_div(&rm, &lm);
            let qc = rc / &lc;
            let piece = Poly {
                nsyms: self.nsyms,
                terms: vec![(qm.clone(), qc.clone())],
            };
            rem = rem.sub(&piece.mul(other));
            quo.push((qm, qc));
        }
        Poly::from_pairs(self.nsyms, quo)
    }

    /// Substitute rational values for every symbol.
    pub fn eval(&self, point: &[BigRational]) -> BigRational {
        let mut acc = BigRational::zero();
        for (m, c) in &self.terms {
            let mut t = c.clone();
            for (id, &e) in m.iter().enumerate() {
                for _ in 0..e {
                    t *= &point[id];
                }
            }
            acc += t;
        }
        acc
    }

    /// Substitute polynomials for symbols (used by linear coordinate changes).
    pub fn substitute(&self, images: &[Poly]) -> Poly {
        let nsyms = images.first().map(|p| p.nsyms).unwrap_or(self.nsyms);
        let mut acc = Poly::zero(nsyms);
        for (m, c) in &self.terms {
            let mut t = Poly::constant(nsyms, c.clone());
            for (id, &e) in m.iter().enumerate() {
                if e > 0 {
                    t = t.mul(&images[id].pow(e));
                }
            }
            acc = acc.add(&t);
        }
        acc
    }

    /// Derivative with per-symbol rules (jet chains may map to other symbols).
    pub fn derive(
        &self,
        rule: &mut dyn FnMut(usize) -> Result<SymDeriv, super::FieldError>,
    ) -> Result<Poly, super::FieldError> {
        let mut pairs: Vec<(Mono, BigRational)> = Vec::new();
        for (m, c) in &self.terms {
            for id in 0..self.nsyms {
                let e = m[id];
                if e == 0 {
                    continue;
                }
                let d = rule(id)?;
                if d == SymDeriv::Zero {
                    continue;
                }
                let mut m2 = m.clone();
                m2[id] -= 1;
                let coeff = c * BigRational::from(BigInt::from(e));
                match d {
                    SymDeriv::One => pairs.push((m2, coeff)),
                    SymDeriv::Sym(s) => {
                        m2[s] += 1;
                        pairs.push((m2, coeff));
                    }
                    SymDeriv::Zero => unreachable!(),
                }
            }
        }
        Ok(Poly::from_pairs(self.nsyms, pairs))
    }

    /// Ids of symbols that actually occur.
    pub fn support(&self) -> Vec<usize> {
        let mut seen = vec![false; self.nsyms];
        for (m, _) in &self.terms {
            for (id, &e) in m.iter().enumerate() {
                if e > 0 {
                    seen[id] = true;
                }
            }
        }
        seen.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect()
    }

    /// Integer-primitive associate with positive leading coefficient, plus
    /// the (nonzero) rational factor taken out: `self = factor * primitive`.
    pub fn primitive(&self) -> (BigRational, Poly) {
        if self.is_zero() {
            return (BigRational::one(), self.clone());
        }
        let mut den_lcm = BigInt::one();
        for (_, c) in &self.terms {
            den_lcm = num_integer::lcm(den_lcm, c.denom().clone());
        }
        let mut num_gcd = BigInt::zero();
        for (_, c) in &self.terms {
            let scaled = c * BigRational::from(den_lcm.clone());
            debug_assert!(scaled.is_integer());
            num_gcd = num_integer::gcd(num_gcd, scaled.numer().clone());
        }
        let mut factor = BigRational::new(num_gcd, den_lcm);
        if self.terms[0].1.is_negative() {
            factor = -factor;
        }
        let prim = self.scale(&factor.recip());
        (factor, prim)
    }

    /// Monic associate (leading coefficient one) plus the factor taken out.
    pub fn monic(&self) -> (BigRational, Poly) {
        if self.is_zero() {
            return (BigRational::one(), self.clone());
        }
        let lc = self.terms[0].1.clone();
        (lc.clone(), self.scale(&lc.recip()))
    }
}

// ---- gcd ----

/// View as a univariate polynomial in symbol `v` with `Poly` coefficients,
/// sorted by descending degree in `v`.
fn to_univar(p: &Poly, v: usize) -> Vec<(u32, Poly)> {
    let mut map: std::collections::BTreeMap<u32, Vec<(Mono, BigRational)>> = Default::default();
    for (m, c) in &p.terms {
        let e = m[v];
        let mut m2 = m.clone();
        m2[v] = 0;
        map.entry(e).or_default().push((m2, c.clone()));
    }
    let mut out: Vec<(u32, Poly)> = map
        .into_iter()
        .map(|(e, pairs)| (e, Poly::from_pairs(p.nsyms, pairs)))
        .collect();
    out.sort_by(|a, b| b.0.cmp(&a.0));
    out
}

fn from_univar(nsyms: usize, v: usize, coeffs: &[(u32, Poly)]) -> Poly {
    let mut pairs = Vec::new();
    for (e, c) in coeffs {
        for (m, k) in &c.terms {
            let mut m2 = m.clone();
            m2[v] += e;
            pairs.push((m2, k.clone()));
        }
    }
    Poly::from_pairs(nsyms, pairs)
}

fn univar_deg(u: &[(u32, Poly)]) -> u32 {
    u.first().map(|(e, _)| *e).unwrap_or(0)
}

/// Pseudo-remainder of `a` by `b` in the main variable `v`.
fn prem(a: &Poly, b: &Poly, v: usize) -> Poly {
    let ub = to_univar(b, v);
    let db = univar_deg(&ub);
    let lcb = from_univar(a.nsyms, v, &[(0, ub[0].1.clone())]);
    let mut r = a.clone();
    loop {
        if r.is_zero() {
            return r;
        }
        let ur = to_univar(&r, v);
        let dr = univar_deg(&ur);
        if dr < db {
            return r;
        }
        // r := lcb * r - lcr * x^(dr-db) * b
        let lcr = ur[0].1.clone();
        let mut shift = vec![0u32; a.nsyms];
        shift[v] = dr - db;
        let shifted = Poly {
            nsyms: a.nsyms,
            terms: vec![(shift, BigRational::one())],
        };
        r = r.mul(&lcb).sub(&b.mul(&shifted).mul(&lcr));
    }
}

/// Content of `p` seen as univariate in `v`: gcd of the `Poly` coefficients.
fn content_wrt(p: &Poly, v: usize) -> Poly {
    let u = to_univar(p, v);
    let mut g = Poly::zero(p.nsyms);
    for (_, c) in &u {
        g = gcd(&g, c);
        if g.is_one() {
            break;
        }
    }
    g
}

/// Polynomial gcd over Q, returned integer-primitive with positive leading
/// coefficient (primitive PRS, recursing on the coefficient ring).
pub fn gcd(a: &Poly, b: &Poly) -> Poly {
    if a.is_zero() {
        return b.primitive().1;
    }
    if b.is_zero() {
        return a.primitive().1;
    }
    if a.degree() == Some(0) || b.degree() == Some(0) {
        return Poly::one(a.nsyms);
    }
    let mut support = a.support();
    for s in b.support() {
        if !support.contains(&s) {
            support.push(s);
        }
    }
    if support.is_empty() {
        return Poly::one(a.nsyms);
    }
    let v = *support.last().unwrap();
    let ca = content_wrt(a, v);
    let cb = content_wrt(b, v);
    let cg = gcd(&ca, &cb);
    let pa = a.divexact(&ca);
    let pb = b.divexact(&cb);
    let (mut r0, mut r1) = if to_univar(&pa, v).first().unwrap().0 >= to_univar(&pb, v).first().unwrap().0
    {
        (pa, pb)
    } else {
        (pb, pa)
    };
    loop {
        let r = prem(&r0, &r1, v);
        if r.is_zero() {
            break;
        }
        let c = content_wrt(&r, v);
        r0 = r1;
        r1 = r.divexact(&c);
    }
    // r1 is the primitive gcd of the primitive parts, up to a unit
    let (_, prim) = r1.primitive();
    // the true gcd must also divide a and b; guard against spurious factors
    let candidate = cg.mul(&prim);
    let (_, candidate) = candidate.primitive();
    candidate
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64) -> BigRational {
        BigRational::from(BigInt::from(n))
    }

    fn x(id: usize) -> Poly {
        Poly::symbol(3, id)
    }

    #[test]
    fn grevlex_orders_by_degree_first() {
        let a = vec![2, 0, 0];
        let b = vec![0, 1, 0];
        assert_eq!(grevlex(&a, &b), Ordering::Greater);
        // same degree: x1^2 > x1 x2 > x2^2 in grevlex
        assert_eq!(grevlex(&vec![2, 0, 0], &vec![1, 1, 0]), Ordering::Greater);
        assert_eq!(grevlex(&vec![1, 1, 0], &vec![0, 2, 0]), Ordering::Greater);
    }

    #[test]
    fn arithmetic_roundtrip() {
        let p = x(0).add(&Poly::constant(3, q(1)));
        let m = p.mul(&x(0).sub(&Poly::constant(3, q(1))));
        // (x+1)(x-1) = x^2 - 1
        let expect = x(0).mul(&x(0)).sub(&Poly::one(3));
        assert_eq!(m, expect);
        assert_eq!(m.divexact(&p), x(0).sub(&Poly::constant(3, q(1))));
    }

    #[test]
    fn gcd_cancels_common_factor() {
        let p = x(0).add(&Poly::one(3)); // x+1
        let a = p.mul(&x(1)).mul(&p); // (x+1)^2 y
        let b = p.mul(&x(2)); // (x+1) z
        let g = gcd(&a, &b);
        assert_eq!(g, p);
    }

    #[test]
    fn gcd_of_coprime_is_one() {
        let a = x(0).add(&x(1)); // x + y
        let b = x(0).sub(&x(1)); // x - y
        assert!(gcd(&a, &b).is_one());
    }

    #[test]
    fn derive_with_jet_chain() {
        // symbols: 0 -> 1 (chain), 1 -> Zero, 2 -> One
        let p = x(0).mul(&x(0)); // a^2, derivative 2 a a'
        let d = p
            .derive(&mut |id| {
                Ok(match id {
                    0 => SymDeriv::Sym(1),
                    2 => SymDeriv::One,
                    _ => SymDeriv::Zero,
                })
            })
            .unwrap();
        let expect = x(0).mul(&x(1)).scale(&q(2));
        assert_eq!(d, expect);
    }
}
