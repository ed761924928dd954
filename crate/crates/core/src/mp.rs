//! Binary floating point with a configurable mantissa width and an unbounded
//! exponent, built on `num-bigint`.
//!
//! Heat-trace inversion peels exponentials off a sum one at a time; the terms
//! being separated differ by hundreds of orders of magnitude, far beyond what
//! `f64` can resolve after subtraction. Only the handful of operations the
//! inversion needs are provided: ring arithmetic, division, `sqrt`, `exp`,
//! `ln` and the constants `ln 2` and `pi`.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use num_bigint::{BigInt, Sign};
use num_traits::{Float, Signed, ToPrimitive, Zero};

/// Default mantissa width for extended-precision work, in bits.
pub const DEFAULT_PREC: u32 = 1024;

/// `man * 2^exp`, with `|man|` holding exactly `prec` bits unless zero.
#[derive(Clone)]
pub struct Mp {
    man: BigInt,
    exp: i64,
    prec: u32,
}

fn normalize(man: BigInt, exp: i64, prec: u32) -> Mp {
    if man.is_zero() {
        return Mp {
            man,
            exp: 0,
            prec,
        };
    }
    let bits = man.bits() as i64;
    let p = prec as i64;
    if bits > p {
        let shift = (bits - p) as u64;
        let neg = man.sign() == Sign::Minus;
        let mut mag = man.abs() >> (shift - 1);
        mag += 1u8;
        mag >>= 1u32;
        // rounding can carry into one extra bit
        let (mag, extra) = if mag.bits() as i64 > p {
            (mag >> 1u32, 1)
        } else {
            (mag, 0)
        };
        let man = if neg { -mag } else { mag };
        Mp {
            man,
            exp: exp + shift as i64 + extra,
            prec,
        }
    } else {
        let shift = (p - bits) as u64;
        Mp {
            man: man << shift,
            exp: exp - shift as i64,
            prec,
        }
    }
}

impl Mp {
    pub fn zero(prec: u32) -> Self {
        Mp {
            man: BigInt::zero(),
            exp: 0,
            prec,
        }
    }

    pub fn from_i64(v: i64, prec: u32) -> Self {
        normalize(BigInt::from(v), 0, prec)
    }

    /// Exact conversion of a finite `f64`.
    pub fn from_f64(x: f64, prec: u32) -> Self {
        assert!(x.is_finite(), "Mp::from_f64 on non-finite value {x}");
        if x == 0.0 {
            return Mp::zero(prec);
        }
        let (mantissa, exponent, sign) = x.integer_decode();
        let man = BigInt::from(mantissa) * i64::from(sign);
        normalize(man, i64::from(exponent), prec)
    }

    pub fn prec(&self) -> u32 {
        self.prec
    }

    pub fn with_prec(&self, prec: u32) -> Self {
        normalize(self.man.clone(), self.exp, prec)
    }

    pub fn is_zero(&self) -> bool {
        self.man.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.man.sign() == Sign::Minus
    }

    pub fn is_positive(&self) -> bool {
        self.man.sign() == Sign::Plus
    }

    /// Position of the leading bit: `|x|` lies in `[2^(m-1), 2^m)`.
    fn magnitude(&self) -> i64 {
        self.exp + self.man.bits() as i64
    }

    /// Nearest `f64`; saturates to `0` or `inf` outside the `f64` range.
    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let bits = self.man.bits() as i64;
        let take = bits.min(64);
        let top = (self.man.abs() >> (bits - take) as u64).to_u64().unwrap_or(0) as f64;
        let e = self.exp + (bits - take);
        let v = ldexp(top, e);
        if self.is_negative() {
            -v
        } else {
            v
        }
    }

    /// `ln |x|` to `f64` accuracy, without materialising `|x|` as an `f64`.
    pub fn ln_abs_f64(&self) -> f64 {
        if self.is_zero() {
            return f64::NEG_INFINITY;
        }
        let bits = self.man.bits() as i64;
        let take = bits.min(64);
        let top = (self.man.abs() >> (bits - take) as u64).to_u64().unwrap_or(1) as f64;
        top.ln() + (self.exp + bits - take) as f64 * std::f64::consts::LN_2
    }

    pub fn neg(&self) -> Self {
        Mp {
            man: -self.man.clone(),
            exp: self.exp,
            prec: self.prec,
        }
    }

    pub fn abs(&self) -> Self {
        Mp {
            man: self.man.abs(),
            exp: self.exp,
            prec: self.prec,
        }
    }

    pub fn add(&self, other: &Mp) -> Mp {
        let prec = self.prec.max(other.prec);
        if self.is_zero() {
            return other.with_prec(prec);
        }
        if other.is_zero() {
            return self.with_prec(prec);
        }
        let gap = self.magnitude() - other.magnitude();
        let limit = prec as i64 + 8;
        if gap > limit {
            return self.with_prec(prec);
        }
        if -gap > limit {
            return other.with_prec(prec);
        }
        let (hi, lo) = if self.exp >= other.exp {
            (self, other)
        } else {
            (other, self)
        };
        let shift = (hi.exp - lo.exp) as u64;
        let man = (&hi.man << shift) + &lo.man;
        normalize(man, lo.exp, prec)
    }

    pub fn sub(&self, other: &Mp) -> Mp {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Mp) -> Mp {
        let prec = self.prec.max(other.prec);
        normalize(&self.man * &other.man, self.exp + other.exp, prec)
    }

    pub fn div(&self, other: &Mp) -> Mp {
        assert!(!other.is_zero(), "Mp division by zero");
        let prec = self.prec.max(other.prec);
        if self.is_zero() {
            return Mp::zero(prec);
        }
        let shift = prec as u64 + 2 + other.man.bits();
        let num = &self.man << shift;
        normalize(num / &other.man, self.exp - other.exp - shift as i64, prec)
    }

    pub fn mul_f64(&self, x: f64) -> Mp {
        self.mul(&Mp::from_f64(x, self.prec))
    }

    pub fn add_f64(&self, x: f64) -> Mp {
        self.add(&Mp::from_f64(x, self.prec))
    }

    /// Multiplication by `2^k`.
    pub fn ldexp(&self, k: i64) -> Mp {
        if self.is_zero() {
            return self.clone();
        }
        Mp {
            man: self.man.clone(),
            exp: self.exp + k,
            prec: self.prec,
        }
    }

    pub fn sqrt(&self) -> Mp {
        assert!(!self.is_negative(), "Mp::sqrt of negative value");
        if self.is_zero() {
            return self.clone();
        }
        let prec = self.prec;
        // want an even exponent and ~2*prec+4 mantissa bits before the root
        let target = 2 * prec as i64 + 4;
        let mut shift = target - self.man.bits() as i64;
        if (self.exp - shift).rem_euclid(2) != 0 {
            shift += 1;
        }
        let m = if shift >= 0 {
            &self.man << shift as u64
        } else {
            &self.man >> (-shift) as u64
        };
        let root = m.sqrt();
        normalize(root, (self.exp - shift) / 2, prec)
    }

    /// `e^x`.
    pub fn exp(&self) -> Mp {
        let prec = self.prec;
        if self.is_zero() {
            return Mp::from_i64(1, prec);
        }
        let x = self.to_f64();
        assert!(x.is_finite() && x.abs() < 1e15, "Mp::exp argument out of range: {x}");
        let k = (x / std::f64::consts::LN_2).round() as i64;
        // squarings: roughly sqrt(prec) balances series length against squaring cost
        let halvings = ((prec as f64).sqrt() / 2.0).ceil() as i64;
        let wp = prec + 64 + halvings as u32;
        let ln2 = ln2(wp);
        let r = self.with_prec(wp).sub(&ln2.mul(&Mp::from_i64(k, wp)));
        let r = r.ldexp(-halvings);
        // Taylor series and squarings in fixed point with `wp` fraction bits
        let shift = r.exp + wp as i64;
        let rf = if shift >= 0 { &r.man << shift as u64 } else { &r.man >> (-shift) as u64 };
        let one = BigInt::from(1u8) << wp as u64;
        let mut sum = one.clone();
        let mut term = one;
        for n in 1..10_000u32 {
            term = (&term * &rf) >> wp as u64;
            term /= n;
            if term.is_zero() {
                break;
            }
            sum += &term;
        }
        for _ in 0..halvings {
            sum = (&sum * &sum) >> wp as u64;
        }
        normalize(sum, k - wp as i64, prec)
    }

    /// Natural logarithm of a positive value.
    pub fn ln(&self) -> Mp {
        assert!(self.is_positive(), "Mp::ln of non-positive value");
        let prec = self.prec;
        let target = prec + 32;
        let y0 = self.ln_abs_f64();
        let mag = y0.abs().max(1.0).log2().ceil() as u32;
        let mut y = Mp::from_f64(y0, target);
        // absolute accuracy in bits; Halley's iteration triples it
        let mut acc = 40u32;
        loop {
            let wp = (3 * acc + mag + 16).min(target);
            let yw = y.with_prec(wp);
            let xw = self.with_prec(wp);
            let ey = yw.exp();
            let corr = xw.sub(&ey).ldexp(1).div(&xw.add(&ey));
            y = yw.add(&corr);
            acc = acc.saturating_mul(3);
            if wp == target {
                break;
            }
        }
        y.with_prec(prec)
    }

    pub fn powi(&self, n: u32) -> Mp {
        let mut acc = Mp::from_i64(1, self.prec);
        let mut base = self.clone();
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            n >>= 1;
        }
        acc
    }

    pub fn cmp_mp(&self, other: &Mp) -> Ordering {
        let d = self.sub(other);
        if d.is_zero() {
            Ordering::Equal
        } else if d.is_negative() {
            Ordering::Less
        } else {
            Ordering::Greater
        }
    }
}

impl fmt::Debug for Mp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mp({:e}, prec={})", self.to_f64(), self.prec)
    }
}

impl fmt::Display for Mp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e}", self.to_f64())
    }
}

fn ldexp(x: f64, e: i64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let mut v = x;
    let mut e = e;
    while e > 1000 {
        v *= 2f64.powi(1000);
        e -= 1000;
        if v.is_infinite() {
            return v;
        }
    }
    while e < -1000 {
        v *= 2f64.powi(-1000);
        e += 1000;
        if v == 0.0 {
            return v;
        }
    }
    v * 2f64.powi(e as i32)
}

// Fixed-point series sum_k scale / ((2k+1) n^(2k+1)), optionally alternating.
fn arctan_series(n: u32, wp: u32, alternating: bool) -> BigInt {
    let scale = BigInt::from(1u8) << wp as u64;
    let n = BigInt::from(n);
    let n2 = &n * &n;
    let mut power = scale / &n;
    let mut sum = BigInt::zero();
    let mut k: u64 = 0;
    while !power.is_zero() {
        let term = &power / BigInt::from(2 * k + 1);
        if alternating && k % 2 == 1 {
            sum -= term;
        } else {
            sum += term;
        }
        power /= &n2;
        k += 1;
    }
    sum
}

thread_local! {
    static CONSTANTS: RefCell<HashMap<u32, (Mp, Mp)>> = RefCell::new(HashMap::new());
}

fn constants(prec: u32) -> (Mp, Mp) {
    CONSTANTS.with(|cell| {
        if let Some(c) = cell.borrow().get(&prec) {
            return c.clone();
        }
        let wp = prec + 64;
        // ln 2 = 2 atanh(1/3); pi = 16 atan(1/5) - 4 atan(1/239)
        let ln2 = arctan_series(3, wp, false) * 2u8;
        let pi = arctan_series(5, wp, true) * 16u8 - arctan_series(239, wp, true) * 4u8;
        let pair = (
            normalize(ln2, -(wp as i64), prec),
            normalize(pi, -(wp as i64), prec),
        );
        cell.borrow_mut().insert(prec, pair.clone());
        pair
    })
}

pub fn ln2(prec: u32) -> Mp {
    constants(prec).0
}

pub fn pi(prec: u32) -> Mp {
    constants(prec).1
}
