//! Exact dyadic rationals `p / 2^q` backed by arbitrary-precision integers.

use alloc::format;
use alloc::string::String;
use core::cmp::Ordering;
use core::fmt;
use core::ops::{Add, Neg, Sub};

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{invalid, Error, Result};

/// A dyadic rational `num / 2^exp`, always in lowest terms (`num` odd or `exp == 0`).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Dyadic {
    num: BigInt,
    exp: u64,
}

impl Dyadic {
    /// Largest denominator exponent accepted before reporting a resource error.
    pub const MAX_EXPONENT: u64 = 1 << 32;

    pub fn new(num: BigInt, exp: u64) -> Result<Self> {
        if exp > Self::MAX_EXPONENT {
            return Err(Error::Resource(format!(
                "dyadic exponent {exp} exceeds the limit {}",
                Self::MAX_EXPONENT
            )));
        }
        Ok(Self::normalized(num, exp))
    }

    fn normalized(mut num: BigInt, mut exp: u64) -> Self {
        match num.trailing_zeros() {
            None => exp = 0,
            Some(tz) => {
                let shift = tz.min(exp);
                if shift > 0 {
                    num >>= shift;
                    exp -= shift;
                }
            }
        }
        Self { num, exp }
    }

    pub fn from_integer(value: i64) -> Self {
        Self {
            num: BigInt::from(value),
            exp: 0,
        }
    }

    pub fn one() -> Self {
        Self::from_integer(1)
    }

    pub fn zero() -> Self {
        Self::from_integer(0)
    }

    /// `2^{-exp}`.
    pub fn pow2_neg(exp: u64) -> Result<Self> {
        Self::new(BigInt::one(), exp)
    }

    /// Parses `p` or `p/d` where `d` is a positive power of two.
    pub fn parse_rational(text: &str) -> Result<Self> {
        let text = text.trim();
        let (p, d) = match text.split_once('/') {
            Some((p, d)) => (p.trim(), d.trim()),
            None => (text, "1"),
        };
        let num: BigInt = p
            .parse()
            .map_err(|_| invalid("beta", format!("`{p}` is not an integer")))?;
        let den: BigUint = d
            .parse()
            .map_err(|_| invalid("beta", format!("`{d}` is not a positive integer")))?;
        if den.is_zero() || (&den & (&den - 1u32)) != BigUint::zero() {
            return Err(invalid("beta", format!("denominator {d} is not a power of two")));
        }
        Self::new(num, den.bits() - 1)
    }

    /// Reconstructs a value from its serialized `(p_hex, q)` form.
    pub fn from_hex_parts(p_hex: &str, q: u64) -> Result<Self> {
        let (neg, digits) = match p_hex.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, p_hex),
        };
        let mag = BigUint::parse_bytes(digits.as_bytes(), 16)
            .ok_or_else(|| invalid("p_hex", format!("`{p_hex}` is not hexadecimal")))?;
        let sign = if neg { Sign::Minus } else { Sign::Plus };
        let value = Self::new(BigInt::from_biguint(sign, mag), q)?;
        if value.exp != q {
            return Err(invalid("p_hex", "serialized dyadic is not in lowest terms"));
        }
        Ok(value)
    }

    /// Serialized form: signed lowercase hexadecimal numerator and exponent.
    pub fn to_hex_parts(&self) -> (String, u64) {
        (self.num.to_str_radix(16), self.exp)
    }

    pub fn numerator(&self) -> &BigInt {
        &self.num
    }

    pub fn exponent(&self) -> u64 {
        self.exp
    }

    pub fn is_negative(&self) -> bool {
        self.num.is_negative()
    }

    pub fn abs(&self) -> Self {
        Self {
            num: self.num.abs(),
            exp: self.exp,
        }
    }

    /// `self + 2^{-exponent}`, exact.
    pub fn add_pow2(&self, exponent: u64) -> Result<Self> {
        Ok(self + &Self::pow2_neg(exponent)?)
    }

    /// `self - 2^{-exponent}`, exact.
    pub fn sub_pow2(&self, exponent: u64) -> Result<Self> {
        Ok(self - &Self::pow2_neg(exponent)?)
    }

    /// Multiplication by an integer.
    pub fn scale(&self, k: i64) -> Self {
        Self::normalized(&self.num * k, self.exp)
    }

    /// Nearest-ish double (truncated to 64 significant bits before rounding).
    pub fn to_f64(&self) -> f64 {
        let mag = self.num.magnitude();
        let v = biguint_times_pow2(mag, -(self.exp as i64));
        if self.num.is_negative() {
            -v
        } else {
            v
        }
    }

    /// `log2 |self|`; `-inf` for zero.
    pub fn log2_abs(&self) -> f64 {
        let mag = self.num.magnitude();
        if mag.is_zero() {
            return f64::NEG_INFINITY;
        }
        let (top, shift) = top_bits(mag);
        libm::log2(top as f64) + shift as f64 - self.exp as f64
    }

    /// Fractional part of `self * k`, in `[0, 1)`, computed exactly before
    /// the final conversion to a double.
    pub fn frac_of_multiple(&self, k: i64) -> f64 {
        self.reducer().frac_of_multiple(k)
    }

    /// Precomputes the residue of the numerator modulo `2^exp` for repeated
    /// fractional-part evaluations. Fractional bits beyond `REDUCER_BITS` are
    /// dropped, which moves `frac(βk)` by less than `|k| 2^{-REDUCER_BITS}`.
    pub fn reducer(&self) -> PhaseReducer {
        let modulus = BigInt::one() << self.exp;
        let mut residue = self.num.mod_floor(&modulus).magnitude().clone();
        let mut exp = self.exp;
        if exp > REDUCER_BITS {
            residue >>= exp - REDUCER_BITS;
            exp = REDUCER_BITS;
        }
        PhaseReducer {
            residue,
            mask: (BigUint::one() << exp) - 1u32,
            exp,
        }
    }

    fn aligned(&self, other: &Self) -> (BigInt, BigInt, u64) {
        let exp = self.exp.max(other.exp);
        (
            &self.num << (exp - self.exp),
            &other.num << (exp - other.exp),
            exp,
        )
    }
}

/// Fractional bits kept by [`PhaseReducer`].
pub const REDUCER_BITS: u64 = 2048;

/// Evaluates `frac(p k / 2^q)` for a fixed dyadic with big-integer arithmetic.
#[derive(Clone, Debug)]
pub struct PhaseReducer {
    residue: BigUint,
    mask: BigUint,
    exp: u64,
}

impl PhaseReducer {
    pub fn frac_of_multiple(&self, k: i64) -> f64 {
        if self.exp == 0 || k == 0 || self.residue.is_zero() {
            return 0.0;
        }
        let mut rem = (&self.residue * k.unsigned_abs()) & &self.mask;
        if rem.is_zero() {
            return 0.0;
        }
        if k < 0 {
            rem = &self.mask - rem + 1u32;
        }
        let mut v = biguint_times_pow2(&rem, -(self.exp as i64));
        if v >= 1.0 {
            v -= 1.0;
        }
        v
    }
}

fn top_bits(x: &BigUint) -> (u64, u64) {
    let bits = x.bits();
    if bits > 64 {
        let shift = bits - 64;
        ((x >> shift).to_u64().unwrap_or(u64::MAX), shift)
    } else {
        (x.to_u64().unwrap_or(0), 0)
    }
}

fn biguint_times_pow2(x: &BigUint, pow: i64) -> f64 {
    if x.is_zero() {
        return 0.0;
    }
    let (top, shift) = top_bits(x);
    let total = pow + shift as i64;
    if total < -1200 {
        return 0.0;
    }
    if total > 1100 {
        return f64::INFINITY;
    }
    libm::ldexp(top as f64, total as i32)
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b, _) = self.aligned(other);
        a.cmp(&b)
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Add for &Dyadic {
    type Output = Dyadic;
    fn add(self, rhs: &Dyadic) -> Dyadic {
        let (a, b, exp) = self.aligned(rhs);
        Dyadic::normalized(a + b, exp)
    }
}

impl Sub for &Dyadic {
    type Output = Dyadic;
    fn sub(self, rhs: &Dyadic) -> Dyadic {
        let (a, b, exp) = self.aligned(rhs);
        Dyadic::normalized(a - b, exp)
    }
}

impl Neg for &Dyadic {
    type Output = Dyadic;
    fn neg(self) -> Dyadic {
        Dyadic {
            num: -&self.num,
            exp: self.exp,
        }
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exp == 0 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/2^{}", self.num, self.exp)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowest_terms() {
        let d = Dyadic::new(BigInt::from(12), 4).unwrap();
        assert_eq!(d.numerator(), &BigInt::from(3));
        assert_eq!(d.exponent(), 2);
        let z = Dyadic::new(BigInt::from(0), 9).unwrap();
        assert_eq!(z.exponent(), 0);
    }

    #[test]
    fn add_pow2_from_one() {
        let b = Dyadic::one().add_pow2(24).unwrap();
        assert_eq!(b.numerator(), &(BigInt::from(1u64 << 24) + 1));
        assert_eq!(b.exponent(), 24);
        let back = b.sub_pow2(24).unwrap();
        assert_eq!(back, Dyadic::one());
    }

    #[test]
    fn add_large_exponent() {
        let b = Dyadic::one().add_pow2(24).unwrap().add_pow2(120).unwrap();
        assert_eq!(b.exponent(), 120);
        // oracle: (2^24 + 1) * 2^96 + 1
        let expect = ((BigInt::from(1u64 << 24) + 1) << 96u32) + 1;
        assert_eq!(b.numerator(), &expect);
        let q = Dyadic::new(BigInt::one() << 120u32, 120).unwrap();
        assert_eq!(q, Dyadic::one());
    }

    #[test]
    fn absurd_exponent_is_a_resource_error() {
        assert!(matches!(
            Dyadic::pow2_neg(Dyadic::MAX_EXPONENT + 1),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn frac_of_multiple_exact() {
        let half = Dyadic::parse_rational("1/2").unwrap();
        assert_eq!(half.frac_of_multiple(3), 0.5);
        assert_eq!(half.frac_of_multiple(-3), 0.5);
        let b = Dyadic::one().add_pow2(24).unwrap();
        assert_eq!(b.frac_of_multiple(1 << 24), 0.0);
        assert_eq!(b.frac_of_multiple(3), 3.0 / (1u64 << 24) as f64);
        assert_eq!(b.frac_of_multiple(-1), 1.0 - 1.0 / (1u64 << 24) as f64);
    }

    #[test]
    fn deep_increments_reduce_cheaply() {
        let b = Dyadic::one().add_pow2(3).unwrap().add_pow2(40320).unwrap();
        let red = b.reducer();
        assert_eq!(red.frac_of_multiple(5), 5.0 / 8.0);
        assert_eq!(red.frac_of_multiple(-1), 7.0 / 8.0);
        assert_eq!(red.frac_of_multiple(100_000), 0.0);
    }

    #[test]
    fn hex_round_trip_and_parse() {
        let b = Dyadic::parse_rational("-5/8").unwrap();
        let (h, q) = b.to_hex_parts();
        assert_eq!((h.as_str(), q), ("-5", 3));
        assert_eq!(Dyadic::from_hex_parts(&h, q).unwrap(), b);
        assert!(Dyadic::parse_rational("1/3").is_err());
        assert!(Dyadic::from_hex_parts("4", 2).is_err());
    }

    #[test]
    fn log2_and_to_f64() {
        let d = Dyadic::pow2_neg(3000).unwrap();
        assert_eq!(d.log2_abs(), -3000.0);
        assert_eq!(d.to_f64(), 0.0);
        assert_eq!(Dyadic::parse_rational("3/4").unwrap().to_f64(), 0.75);
    }
}
