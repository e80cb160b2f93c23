//! 256-bit reference arithmetic for unit-test oracles.

use astro_float::{BigFloat, Consts, RoundingMode};

const P: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

pub(crate) struct Hp {
    cc: Consts,
}

impl Hp {
    pub fn new() -> Self {
        Hp {
            cc: Consts::new().expect("constant cache"),
        }
    }

    pub fn of(&self, v: f64) -> BigFloat {
        BigFloat::from_f64(v, P)
    }

    pub fn to_f64(&self, v: &BigFloat) -> f64 {
        v.to_string().parse().expect("decimal rendering parses")
    }

    pub fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, P, RM)
    }

    pub fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, P, RM)
    }

    pub fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, P, RM)
    }

    pub fn div(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.div(b, P, RM)
    }

    pub fn dot(&self, a: &[f64], b: &[f64]) -> BigFloat {
        a.iter()
            .zip(b)
            .fold(self.of(0.0), |acc, (x, y)| self.add(&acc, &self.mul(&self.of(*x), &self.of(*y))))
    }

    /// `log(1 + exp(m))` evaluated directly.
    pub fn softplus(&mut self, m: &BigFloat) -> BigFloat {
        let e = m.exp(P, RM, &mut self.cc);
        self.of(1.0).add(&e, P, RM).ln(P, RM, &mut self.cc)
    }
}
