//! Seeded random sampling: generic evaluation points for rank computations
//! and random scalars/operators for the property suites.

use crate::field::{Context, Scalar};
use crate::weyl::{MultiIndex, ScalarOperator};
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::Rng;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Random rational assignment for every symbol of a context. Values are
/// small fractions with distinct-ish numerators so that generic-rank
/// computations rarely degenerate; callers resample on bad luck.
pub fn generic_point<R: Rng>(ctx: &Arc<Context>, rng: &mut R) -> BTreeMap<usize, BigRational> {
    let mut pt = BTreeMap::new();
    for id in 0..ctx.num_symbols() {
        let num = rng.gen_range(2..60) * if rng.gen_bool(0.5) { 1 } else { -1 };
        let den = rng.gen_range(1..7);
        pt.insert(id, BigRational::new(BigInt::from(num), BigInt::from(den)));
    }
    pt
}

/// Bounded random scalars (small polynomials, occasionally a fraction).
pub struct ScalarSampler {
    ctx: Arc<Context>,
    pub max_degree: u32,
    pub max_terms: usize,
    pub fraction_prob: f64,
}

impl ScalarSampler {
    pub fn new(ctx: &Arc<Context>) -> Self {
        ScalarSampler {
            ctx: ctx.clone(),
            max_degree: 2,
            max_terms: 3,
            fraction_prob: 0.3,
        }
    }

    fn sample_poly<R: Rng>(&self, rng: &mut R) -> Scalar {
        let nterms = rng.gen_range(1..=self.max_terms);
        let mut acc = Scalar::zero(&self.ctx);
        for _ in 0..nterms {
            let c = rng.gen_range(-4i64..=4);
            if c == 0 {
                continue;
            }
            let mut term = Scalar::from_int(&self.ctx, c);
            let mut deg = 0;
            while deg < self.max_degree && rng.gen_bool(0.5) {
                let i = rng.gen_range(1..=self.ctx.n());
                term = term.mul(&Scalar::var(&self.ctx, i));
                deg += 1;
            }
            acc = acc.add(&term);
        }
        acc
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Scalar {
        let num = self.sample_poly(rng);
        if rng.gen_bool(self.fraction_prob) {
            let mut den = self.sample_poly(rng);
            if den.is_zero() {
                den = Scalar::one(&self.ctx);
            }
            num.div(&den)
        } else {
            num
        }
    }

    /// Nonzero polynomial sample (for denominators and pivots).
    pub fn sample_nonzero<R: Rng>(&self, rng: &mut R) -> Scalar {
        loop {
            let s = self.sample(rng);
            if !s.is_zero() {
                return s;
            }
        }
    }
}

/// Random scalar operators of bounded order with polynomial coefficients.
pub struct OperatorSampler {
    pub scalars: ScalarSampler,
    pub max_order: u32,
    pub max_terms: usize,
}

impl OperatorSampler {
    pub fn new(ctx: &Arc<Context>, max_order: u32) -> Self {
        let mut scalars = ScalarSampler::new(ctx);
        // polynomial coefficients by default; fractions opt-in via the field
        scalars.fraction_prob = 0.0;
        OperatorSampler { scalars, max_order, max_terms: 3 }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> ScalarOperator {
        let ctx = self.scalars.ctx.clone();
        let n = ctx.n();
        let mut op = ScalarOperator::zero(&ctx);
        let nterms = rng.gen_range(1..=self.max_terms);
        for _ in 0..nterms {
            let mut counts = vec![0u32; n];
            let order = rng.gen_range(0..=self.max_order);
            for _ in 0..order {
                counts[rng.gen_range(0..n)] += 1;
            }
            let c = self.scalars.sample(rng);
            op = op.add(&ScalarOperator::monomial(&ctx, MultiIndex::new(counts), c));
        }
        op
    }
}
