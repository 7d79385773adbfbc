//! Model parameters, the frequency `β` in exact or floating form, and the
//! phase sequences `(θ_k, α_k, γ_k)` that parameterize the scattering blocks.

mod dyadic;

pub use dyadic::{Dyadic, PhaseReducer};

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use num_complex::Complex64;
use num_traits::Float;

use crate::error::{invalid, Result};

/// Reduces an angle to `[0, 2π)`.
pub fn reduce_angle(x: f64) -> f64 {
    let mut y = x - TAU * Float::floor(x / TAU);
    if y >= TAU {
        y -= TAU;
    }
    if y < 0.0 {
        y = 0.0;
    }
    y
}

/// `e^{iφ}`.
#[inline]
pub fn cis(phase: f64) -> Complex64 {
    let (s, c) = libm::sincos(phase);
    Complex64::new(c, s)
}

/// The golden-mean frequency `(√5 − 1)/2` used for irrational demos.
pub fn golden_beta() -> BetaValue {
    BetaValue::Float((Float::sqrt(5.0) - 1.0) / 2.0)
}

/// The frequency `β`, either an exact dyadic rational or a double.
#[derive(Clone, Debug, PartialEq)]
pub enum BetaValue {
    Exact(Dyadic),
    Float(f64),
}

impl BetaValue {
    pub fn to_f64(&self) -> f64 {
        match self {
            BetaValue::Exact(d) => d.to_f64(),
            BetaValue::Float(b) => *b,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, BetaValue::Exact(_))
    }

    /// `frac(β k)` in `[0, 1)`. Exact mode reduces with integer arithmetic.
    pub fn frac_of_multiple(&self, k: i64) -> f64 {
        match self {
            BetaValue::Exact(d) => d.frac_of_multiple(k),
            BetaValue::Float(b) => float_frac_mul(*b, k),
        }
    }
}

/// `frac(b k)` of the exact product: the rounding error of `b * k` is
/// recovered with a fused multiply-add and added after the floor.
fn float_frac_mul(b: f64, k: i64) -> f64 {
    let kf = k as f64;
    let x = b * kf;
    let err = libm::fma(b, kf, -x);
    let f = (x - Float::floor(x)) + err;
    if f >= 1.0 {
        f - 1.0
    } else if f < 0.0 {
        f + 1.0
    } else {
        f
    }
}

/// `θ_k = 2πβk + θ`, reduced to `[0, 2π)`.
pub fn phase_theta(beta: &BetaValue, theta: f64, k: i64) -> f64 {
    reduce_angle(TAU * beta.frac_of_multiple(k) + theta)
}

/// Reflection/transmission amplitudes with `r² + t² = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scattering {
    pub r: f64,
    pub t: f64,
}

impl Scattering {
    /// `r` is derived from `t` as `sqrt(1 − t²)`.
    pub fn from_t(t: f64) -> Result<Self> {
        if !t.is_finite() || !(0.0..=1.0).contains(&t) {
            return Err(invalid("t", format!("{t} is outside [0, 1]")));
        }
        Ok(Self {
            r: Float::sqrt((1.0 - t * t).max(0.0)),
            t,
        })
    }
}

/// Validated parameters of the almost-periodic model. `t` is stored and `r`
/// derived; all angles live in `[0, 2π)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    scattering: Scattering,
    alpha: f64,
    theta: f64,
    lambda: f64,
    beta: BetaValue,
}

fn check_angle(field: &'static str, value: f64) -> Result<f64> {
    if !value.is_finite() {
        return Err(invalid(field, format!("{value} is not finite")));
    }
    Ok(reduce_angle(value))
}

/// Builds validated model parameters.
pub fn make_params(
    t: f64,
    alpha: f64,
    theta: f64,
    lambda: f64,
    beta: BetaValue,
) -> Result<ModelParams> {
    let scattering = Scattering::from_t(t)?;
    if let BetaValue::Float(b) = beta {
        if !b.is_finite() {
            return Err(invalid("beta", format!("{b} is not finite")));
        }
    }
    Ok(ModelParams {
        scattering,
        alpha: check_angle("alpha", alpha)?,
        theta: check_angle("theta", theta)?,
        lambda: check_angle("lambda", lambda)?,
        beta,
    })
}

impl ModelParams {
    pub fn t(&self) -> f64 {
        self.scattering.t
    }
    pub fn r(&self) -> f64 {
        self.scattering.r
    }
    pub fn scattering(&self) -> Scattering {
        self.scattering
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn beta(&self) -> &BetaValue {
        &self.beta
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        Ok(Self {
            theta: check_angle("theta", theta)?,
            ..self.clone()
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Ok(Self {
            lambda: check_angle("lambda", lambda)?,
            ..self.clone()
        })
    }

    pub fn with_beta(&self, beta: BetaValue) -> Result<Self> {
        make_params(self.t(), self.alpha, self.theta, self.lambda, beta)
    }

    /// Phase provider for this parameter set.
    pub fn phases(&self) -> AlmostPeriodic {
        AlmostPeriodic::new(self.beta.clone(), self.theta, self.alpha)
    }

    /// FNV-1a digest of the canonical parameter encoding.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv::new();
        h.write(&self.scattering.t.to_bits().to_le_bytes());
        h.write(&self.alpha.to_bits().to_le_bytes());
        h.write(&self.theta.to_bits().to_le_bytes());
        h.write(&self.lambda.to_bits().to_le_bytes());
        match &self.beta {
            BetaValue::Exact(d) => {
                let (p, q) = d.to_hex_parts();
                h.write(b"E");
                h.write(p.as_bytes());
                h.write(&q.to_le_bytes());
            }
            BetaValue::Float(b) => {
                h.write(b"F");
                h.write(&b.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }
}

pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

/// Provider of the phases `θ_k`, `α_k`, `γ_k` for integer `k`.
pub trait PhaseSequence {
    fn theta(&self, k: i64) -> f64;
    fn alpha(&self, k: i64) -> f64;
    fn gamma(&self, k: i64) -> f64;
}

/// `θ_k = 2πβk + θ`, `α_k = α`, `γ_k = (−1)^{k+1} α`.
#[derive(Clone, Debug)]
pub struct AlmostPeriodic {
    beta: BetaValue,
    reducer: Option<PhaseReducer>,
    theta: f64,
    alpha: f64,
}

impl AlmostPeriodic {
    pub fn new(beta: BetaValue, theta: f64, alpha: f64) -> Self {
        let reducer = match &beta {
            BetaValue::Exact(d) => Some(d.reducer()),
            BetaValue::Float(_) => None,
        };
        Self {
            beta,
            reducer,
            theta: reduce_angle(theta),
            alpha: reduce_angle(alpha),
        }
    }

    pub fn beta(&self) -> &BetaValue {
        &self.beta
    }

    /// `frac(β k)`, sharing the precomputed reducer in exact mode.
    pub fn frac_of_multiple(&self, k: i64) -> f64 {
        match (&self.reducer, &self.beta) {
            (Some(red), _) => red.frac_of_multiple(k),
            (None, BetaValue::Float(b)) => float_frac_mul(*b, k),
            (None, BetaValue::Exact(d)) => d.frac_of_multiple(k),
        }
    }

    /// `2πβm + 2θ` reduced, i.e. `θ_a + θ_b` for `a + b = m`.
    pub fn pair_phase(&self, m: i64) -> f64 {
        reduce_angle(TAU * self.frac_of_multiple(m) + 2.0 * self.theta)
    }
}

impl PhaseSequence for AlmostPeriodic {
    fn theta(&self, k: i64) -> f64 {
        reduce_angle(TAU * self.frac_of_multiple(k) + self.theta)
    }
    fn alpha(&self, _k: i64) -> f64 {
        self.alpha
    }
    fn gamma(&self, k: i64) -> f64 {
        if k.rem_euclid(2) == 1 {
            self.alpha
        } else {
            reduce_angle(-self.alpha)
        }
    }
}

/// Explicit phase tables covering `k ∈ [first, first + len)`.
///
/// Panics when queried outside the stored range.
#[derive(Clone, Debug)]
pub struct ExplicitArrays {
    first: i64,
    theta: Vec<f64>,
    alpha: Vec<f64>,
    gamma: Vec<f64>,
}

impl ExplicitArrays {
    pub fn new(first: i64, theta: Vec<f64>, alpha: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if theta.len() != alpha.len() || theta.len() != gamma.len() {
            return Err(invalid("phases", "theta, alpha and gamma lengths differ"));
        }
        let all = theta.iter().chain(&alpha).chain(&gamma);
        if all.clone().any(|x| !x.is_finite()) {
            return Err(invalid("phases", "non-finite phase"));
        }
        Ok(Self {
            first,
            theta,
            alpha,
            gamma,
        })
    }

    pub fn range(&self) -> core::ops::Range<i64> {
        self.first..self.first + self.theta.len() as i64
    }

    fn index(&self, k: i64) -> usize {
        let i = k - self.first;
        assert!(
            i >= 0 && (i as usize) < self.theta.len(),
            "phase index {k} outside the explicit range {:?}",
            self.range()
        );
        i as usize
    }
}

impl PhaseSequence for ExplicitArrays {
    fn theta(&self, k: i64) -> f64 {
        self.theta[self.index(k)]
    }
    fn alpha(&self, k: i64) -> f64 {
        self.alpha[self.index(k)]
    }
    fn gamma(&self, k: i64) -> f64 {
        self.gamma[self.index(k)]
    }
}

/// Half-line phases of the rank-one perturbation: `θ̃_0 = θ_0 − λ`, all else unchanged.
#[derive(Clone, Debug)]
pub struct RankOneShifted<P> {
    pub inner: P,
    pub lambda: f64,
}

impl<P: PhaseSequence> PhaseSequence for RankOneShifted<P> {
    fn theta(&self, k: i64) -> f64 {
        if k == 0 {
            reduce_angle(self.inner.theta(0) - self.lambda)
        } else {
            self.inner.theta(k)
        }
    }
    fn alpha(&self, k: i64) -> f64 {
        self.inner.alpha(k)
    }
    fn gamma(&self, k: i64) -> f64 {
        self.inner.gamma(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_extremes() {
        let p = make_params(0.0, 0.0, 0.0, 0.0, BetaValue::Float(0.3)).unwrap();
        assert_eq!(p.r(), 1.0);
        let p = make_params(1.0, 0.0, 0.0, 0.0, BetaValue::Float(0.3)).unwrap();
        assert_eq!(p.r(), 0.0);
        let h = Float::sqrt(0.5);
        let p = make_params(h, 0.0, 0.0, 0.0, BetaValue::Float(0.3)).unwrap();
        assert!((p.r() - h).abs() < 1e-15);
        assert!((p.r() * p.r() + p.t() * p.t() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn params_validation_names_the_field() {
        let err = make_params(1.5, 0.0, 0.0, 0.0, BetaValue::Float(0.3)).unwrap_err();
        assert!(matches!(err, crate::Error::Validation { field: "t", .. }));
        let err = make_params(0.5, f64::NAN, 0.0, 0.0, BetaValue::Float(0.3)).unwrap_err();
        assert!(matches!(err, crate::Error::Validation { field: "alpha", .. }));
        let err = make_params(0.5, 0.0, 0.0, f64::INFINITY, BetaValue::Float(0.3)).unwrap_err();
        assert!(matches!(err, crate::Error::Validation { field: "lambda", .. }));
        let p = make_params(0.5, -1.0, 7.0, 0.0, BetaValue::Float(0.3)).unwrap();
        assert!((0.0..TAU).contains(&p.alpha()) && (0.0..TAU).contains(&p.theta()));
    }

    #[test]
    fn phase_theta_examples() {
        let one = BetaValue::Exact(Dyadic::one());
        for k in [-7, 0, 3, 1 << 40] {
            assert!((phase_theta(&one, 0.7, k) - 0.7).abs() < 1e-15);
        }
        let half = BetaValue::Exact(Dyadic::parse_rational("1/2").unwrap());
        assert!((phase_theta(&half, 0.0, 3) - core::f64::consts::PI).abs() < 1e-15);
        let b = BetaValue::Exact(Dyadic::one().add_pow2(24).unwrap());
        assert_eq!(phase_theta(&b, 0.0, 1 << 24), 0.0);
    }

    #[test]
    fn exact_mode_avoids_float_round_off() {
        let exact = Dyadic::one().add_pow2(24).unwrap().add_pow2(80).unwrap();
        let k = 1i64 << 50;
        // oracle: p k mod 2^80 with p = 2^80 + 2^56 + 1 is 2^50, so frac = 2^-30
        let oracle = 1.0 / (1u64 << 30) as f64;
        let b = BetaValue::Exact(exact.clone());
        assert_eq!(b.frac_of_multiple(k), oracle);
        let fl = BetaValue::Float(exact.to_f64());
        assert_eq!(fl.frac_of_multiple(k), 0.0);
        assert!((phase_theta(&b, 0.0, k) - TAU * oracle).abs() < 1e-20);
    }

    #[test]
    fn gamma_alternates() {
        let ap = AlmostPeriodic::new(BetaValue::Float(0.1), 0.0, 0.4);
        for k in -5..5 {
            let g0 = ap.gamma(k);
            let g1 = ap.gamma(k + 1);
            assert!((reduce_angle(g0 + g1)).min(TAU - reduce_angle(g0 + g1)) < 1e-15);
        }
        assert_eq!(ap.gamma(1), 0.4);
    }
}
