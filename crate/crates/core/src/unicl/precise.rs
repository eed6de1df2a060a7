//! Double-double evaluation of the contrastive loss.
//!
//! Central differences divide a loss difference by `2 * eps`, so f64
//! rounding in the loss (about 1e-16) turns into roughly 1e-11 of noise in
//! the numeric derivative. Evaluating the loss with ~32 significant digits
//! leaves only the truncation term of the difference quotient.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::UniclBatch;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN_2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl Dd {
    pub(crate) const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub(crate) fn from_f64(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    pub(crate) fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn scale(self, power_of_two: f64) -> Dd {
        Dd {
            hi: self.hi * power_of_two,
            lo: self.lo * power_of_two,
        }
    }

    pub(crate) fn exp(self) -> Dd {
        if self.hi < -700.0 {
            return Dd::ZERO;
        }
        const SQUARINGS: i32 = 10;
        let k = (self.hi / LN_2.hi).round();
        let r = (self - LN_2 * Dd::from_f64(k)).scale(2f64.powi(-SQUARINGS));
        let mut sum = Dd::ONE;
        let mut term = Dd::ONE;
        for n in 1..=16 {
            term = term * r / Dd::from_f64(n as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-34 {
                break;
            }
        }
        for _ in 0..SQUARINGS {
            sum = sum * sum;
        }
        sum.scale(2f64.powi(k as i32))
    }

    pub(crate) fn ln(self) -> Dd {
        let mut y = Dd::from_f64(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::ONE;
        }
        y
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + -o
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let (hi, lo) = quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi));
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from_f64(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from_f64(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from_f64(q3)
    }
}

fn dot(a: &[f64], b: &[f64]) -> Dd {
    let mut acc = Dd::ZERO;
    for (x, y) in a.iter().zip(b) {
        let (p, e) = two_prod(*x, *y);
        acc = acc + Dd { hi: p, lo: 0.0 } + Dd { hi: e, lo: 0.0 };
    }
    acc
}

fn log_sum_exp(values: &[Dd]) -> Dd {
    let max = values
        .iter()
        .copied()
        .fold(values[0], |m, v| if v.hi > m.hi || (v.hi == m.hi && v.lo > m.lo) { v } else { m });
    let mut sum = Dd::ZERO;
    for v in values {
        sum = sum + (*v - max).exp();
    }
    max + sum.ln()
}

/// The loss of [`super::unicl_loss_value`], carried in double-double.
pub(crate) fn loss(batch: &UniclBatch) -> Dd {
    let n = batch.len();
    let tau = Dd::from_f64(batch.temperature());
    let s: Vec<Vec<Dd>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| dot(batch.image().row(i), batch.text().row(j)) / tau)
                .collect()
        })
        .collect();
    let t = batch.targets();
    let mut total = Dd::ZERO;
    for a in 0..n {
        let column: Vec<Dd> = (0..n).map(|i| s[i][a]).collect();
        let mut pos = Dd::ZERO;
        let mut count = 0;
        for b in (0..n).filter(|&b| t[b] == t[a]) {
            pos = pos + s[a][b] + s[b][a];
            count += 1;
        }
        total = total + log_sum_exp(&s[a]) + log_sum_exp(&column) - pos / Dd::from_f64(count as f64);
    }
    total / Dd::from_f64(2.0 * n as f64)
}
