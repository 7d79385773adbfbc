//! Staged construction of a resonant frequency `β_∞ = lim β_m`: surrogate
//! spectral constants, selection of the times `T_m`, the robustness radii
//! `Δ_m`, dyadic increments `β_{m+1} = β_m + 2^{-κ_m!}`, direct verification
//! of the tail-average condition, and the perturbation bound in `β`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI, TAU};

use num_bigint::BigUint;
use num_traits::{Float, ToPrimitive};

use crate::error::{invalid, Error, Result};
use crate::evolution::{
    evolve_moments, instability_ratio, required_dimension, tail_average_scan, LogFifthRoot, Profile, StateVector,
};
use crate::model::{BetaValue, Dyadic, ModelParams};
use crate::operator::{assemble_half, assemble_rank_one, Boundary, Geometry};
use crate::spectral::{arc_contains, density, eigendecompose, sup_density};

/// Margin subtracted from the fractional part of `log2 Δ` before flooring.
pub const LOG2_SLACK: f64 = 1e-9;

/// `Δ(T) = (T+1) / (f(T) π Σ_{j=T}^{2T} 4^{j+1}(2j²-j))` kept as the exact sum
/// and its base-2 logarithm.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaValue {
    pub t: u64,
    pub sum: BigUint,
    pub log2: f64,
    /// `e` with `2^e ≤ Δ`, from the exact bit length of the sum.
    pub lower_exponent: i64,
}

impl DeltaValue {
    /// The dyadic lower bound `2^{lower_exponent}`.
    pub fn lower_bound(&self) -> Result<Dyadic> {
        if self.lower_exponent >= 0 {
            return Err(Error::Internal(format!("Δ ≥ 1 at T = {}", self.t)));
        }
        Dyadic::pow2_neg(self.lower_exponent.unsigned_abs())
    }
}

/// `Σ_{j=T}^{2T} 4^{j+1}(2j²-j)` as an exact integer.
pub fn delta_sum(t: u64) -> Result<BigUint> {
    if t < 2 {
        return Err(invalid("T", format!("{t} is below 2")));
    }
    if t > 1 << 26 {
        return Err(Error::Resource(format!("T = {t} is too large for the exact Δ sum")));
    }
    // every term 2j²-j < 2^56 sits at bit 2(j+1); accumulate in 32-bit digits
    let top_bit = 2 * (2 * t + 1) + 64;
    let mut digits = vec![0u64; (top_bit / 32 + 2) as usize];
    for j in t..=2 * t {
        let mut carry = (2 * j * j - j) as u128;
        let pos = 2 * (j + 1);
        let (mut d, shift) = ((pos / 32) as usize, pos % 32);
        carry <<= shift;
        while carry != 0 {
            let v = digits[d] as u128 + (carry & 0xffff_ffff);
            digits[d] = (v & 0xffff_ffff) as u64;
            carry = (carry >> 32) + (v >> 32);
            d += 1;
        }
    }
    Ok(BigUint::new(digits.into_iter().map(|d| d as u32).collect()))
}

/// `Δ(T)` for the profile `f`.
pub fn delta<F: Profile + ?Sized>(t: u64, f: &F) -> Result<DeltaValue> {
    let sum = delta_sum(t)?;
    let bits = sum.bits();
    let shift = bits.saturating_sub(64);
    let top = (&sum >> shift).to_u64().unwrap_or(u64::MAX) as f64;
    let frac = Float::log2((t + 1) as f64) - Float::log2(f.value(t as f64)) - Float::log2(PI) - Float::log2(top);
    let int_part = -(shift as i64);
    Ok(DeltaValue {
        t,
        log2: int_part as f64 + frac,
        lower_exponent: int_part + Float::floor(frac - LOG2_SLACK) as i64,
        sum,
    })
}

/// `C_1² - 3 √(2π) C_2 (2/f(T) + 1/T)^{1/2} - 2/f(T)`; `T` is admissible when this is `≥ 0`.
pub fn admissibility_gap<F: Profile + ?Sized>(c1: f64, c2: f64, f: &F, t: u64) -> f64 {
    let ft = f.value(t as f64);
    c1 * c1 - 3.0 * Float::sqrt(TAU) * c2 * Float::sqrt(2.0 / ft + 1.0 / t as f64) - 2.0 / ft
}

/// Smallest `T ≥ max(t_min, 2)` with [`admissibility_gap`] `≥ 0`. The gap is
/// increasing in `T`, so a doubling search followed by bisection is exact.
pub fn select_t<F: Profile + ?Sized>(c1: f64, c2: f64, f: &F, t_min: u64, max_t: u64) -> Result<u64> {
    if !(c1 > 0.0) || !(c2 >= 0.0) {
        return Err(invalid("constants", format!("need c1 > 0 and c2 ≥ 0, got ({c1}, {c2})")));
    }
    let lo = t_min.max(2);
    if lo > max_t || admissibility_gap(c1, c2, f, max_t) < 0.0 {
        return Err(Error::Budget(format!(
            "no admissible T in [{lo}, {max_t}] for c1 = {c1}, c2 = {c2}"
        )));
    }
    if admissibility_gap(c1, c2, f, lo) >= 0.0 {
        return Ok(lo);
    }
    let (mut bad, mut good) = (lo, lo);
    while admissibility_gap(c1, c2, f, good) < 0.0 {
        bad = good;
        good = good.saturating_mul(2).min(max_t);
    }
    while good - bad > 1 {
        let mid = bad + (good - bad) / 2;
        if admissibility_gap(c1, c2, f, mid) >= 0.0 {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(good)
}

fn factorial(k: u32) -> Option<u64> {
    (1..=k as u64).try_fold(1u64, |a, b| a.checked_mul(b))
}

/// Smallest `κ ≥ 1` with `κ! > -log2 Δ + 1`.
pub fn minimal_kappa(log2_delta: f64) -> u32 {
    let need = -log2_delta + 1.0;
    (1..).find(|&k| factorial(k).map_or(true, |f| f as f64 > need)).unwrap_or(u32::MAX)
}

/// One completed stage of the construction.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaStage {
    pub m: u32,
    pub beta: Dyadic,
    pub t: u64,
    pub delta: DeltaValue,
    pub kappa: u32,
    /// `β_{m+1} = β_m + 2^{-κ!}`.
    pub next_beta: Dyadic,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub verification: Verification,
}

/// Chooses `κ_m` and `β_{m+1}` for the last stage of `deltas`, checking
/// `|β_{m+1} - β_k| < 2^{e_k} ≤ Δ_k` exactly for every `k`.
pub fn next_beta(betas: &[Dyadic], deltas: &[DeltaValue]) -> Result<(Dyadic, u32)> {
    let (Some(beta_m), Some(delta_m)) = (betas.last(), deltas.last()) else {
        return Err(invalid("history", "empty stage history"));
    };
    if betas.len() != deltas.len() {
        return Err(invalid("history", "β and Δ lists differ in length"));
    }
    let bounds = deltas.iter().map(DeltaValue::lower_bound).collect::<Result<Vec<_>>>()?;
    let mut kappa = minimal_kappa(delta_m.log2);
    loop {
        let exp = factorial(kappa)
            .filter(|&e| e <= Dyadic::MAX_EXPONENT)
            .ok_or_else(|| Error::Resource(format!("2^-{kappa}! exceeds the dyadic exponent limit")))?;
        let next = beta_m.add_pow2(exp)?;
        if betas.iter().zip(&bounds).all(|(b, lb)| (&next - b).abs() < *lb) {
            return Ok((next, kappa));
        }
        if kappa > 12 {
            return Err(Error::Internal("condition (iii) unsatisfiable".into()));
        }
        kappa += 1;
    }
}

/// Radical inverse of `i` in the given base.
pub fn halton(mut i: u64, base: u64) -> f64 {
    let (mut v, mut scale) = (0.0, 1.0);
    while i > 0 {
        scale /= base as f64;
        v += (i % base) as f64 * scale;
        i /= base;
    }
    v
}

/// `(θ, λ)` for Halton points `1..=n`: `θ ∈ [0, 2π)`, `λ ∈ [π/6, π/2]`.
pub fn halton_samples(n: usize) -> Vec<(f64, f64)> {
    (1..=n as u64)
        .map(|i| (TAU * halton(i, 2), FRAC_PI_6 + (FRAC_PI_2 - FRAC_PI_6) * halton(i, 3)))
        .collect()
}

/// Executes independent sample evaluations; implementations must return
/// results in index order.
pub trait SampleRunner {
    fn run(&self, n: usize, job: &(dyn Fn(usize) -> Result<Vec<f64>> + Sync)) -> Vec<Result<Vec<f64>>>;
}

/// Evaluates samples one after another.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl SampleRunner for Sequential {
    fn run(&self, n: usize, job: &(dyn Fn(usize) -> Result<Vec<f64>> + Sync)) -> Vec<Result<Vec<f64>>> {
        (0..n).map(job).collect()
    }
}

/// Condition check at one `(θ, λ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleCheck {
    pub theta: f64,
    pub lambda: f64,
    pub lhs: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum VerificationStatus {
    Verified,
    Failed,
    /// Not every sample could be evaluated.
    Partial(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verification {
    pub checks: Vec<SampleCheck>,
    pub status: VerificationStatus,
}

/// Tail averages `(1/(T+1)) Σ_{j=T}^{2T} ‖P_{n ≥ T/f(T)} U_λ(β,θ)⁺^j φ_1‖²` for every
/// sample and every `T` in `ts`; outer index is the sample.
pub fn tail_scan(
    params: &ModelParams,
    samples: &[(f64, f64)],
    ts: &[usize],
    max_dim: usize,
    runner: &dyn SampleRunner,
) -> Result<Vec<Vec<f64>>> {
    let t_max = ts.iter().copied().max().unwrap_or(0);
    let n_dim = 4 * t_max + 4;
    if n_dim > max_dim {
        return Err(Error::Budget(format!("T = {t_max} needs dimension {n_dim} above the limit {max_dim}")));
    }
    let job = |i: usize| -> Result<Vec<f64>> {
        let (theta, lambda) = samples[i];
        let p = params.with_theta(theta)?.with_lambda(lambda)?;
        let u = assemble_rank_one(&p, n_dim, Boundary::Open)?;
        let psi = StateVector::basis(u.geometry(), 1)?;
        tail_average_scan(&u, &psi, ts, &LogFifthRoot)
    };
    runner.run(samples.len(), &job).into_iter().collect()
}

/// Checks the tail-average condition `lhs ≥ 1/f(T)²` at each sample.
pub fn verify_stage(
    params: &ModelParams,
    t: u64,
    samples: &[(f64, f64)],
    max_dim: usize,
    runner: &dyn SampleRunner,
) -> Result<Verification> {
    let lhs = match tail_scan(params, samples, &[t as usize], max_dim, runner) {
        Ok(v) => v,
        Err(Error::Budget(reason)) => {
            return Ok(Verification {
                checks: Vec::new(),
                status: VerificationStatus::Partial(reason),
            })
        }
        Err(e) => return Err(e),
    };
    let first: Vec<f64> = lhs.iter().map(|l| l[0]).collect();
    Ok(checks_from(samples, &first, t))
}

fn checks_from(samples: &[(f64, f64)], lhs: &[f64], t: u64) -> Verification {
    let threshold = condition_threshold(t);
    let checks: Vec<SampleCheck> = samples
        .iter()
        .zip(lhs)
        .map(|(&(theta, lambda), &l)| SampleCheck {
            theta,
            lambda,
            lhs: l,
            threshold,
            pass: l >= threshold,
        })
        .collect();
    let status = if checks.iter().all(|c| c.pass) {
        VerificationStatus::Verified
    } else {
        VerificationStatus::Failed
    };
    Verification { checks, status }
}

/// `1/f(T)²`.
pub fn condition_threshold(t: u64) -> f64 {
    Float::powi(LogFifthRoot.value(t as f64), -2)
}

/// Parameters of the spectral-window surrogate for the decomposition constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantsConfig {
    pub n_dim: usize,
    /// Poisson smoothing scale.
    pub epsilon: f64,
    /// Smallest acceptable `μ_0` mass of the window.
    pub min_mass: f64,
    /// Distance kept from detected point-mass peaks.
    pub peak_distance: f64,
    /// Largest density ratio bound `S` tried (powers of two from 2).
    pub max_s: f64,
    /// Number of `λ` values in `[π/6, π/2]` for the worst case.
    pub n_lambda: usize,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        Self {
            n_dim: 512,
            epsilon: 0.05,
            min_mass: 0.05,
            peak_distance: 0.05,
            max_s: 1024.0,
            n_lambda: 5,
        }
    }
}

/// Surrogate constants: `c1² = min_λ μ_λ(I)`, `c2² = max_λ sup_I` of the smoothed
/// density of `μ_λ` restricted to `I`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constants {
    pub c1: f64,
    pub c2: f64,
    pub s: f64,
    pub window: (f64, f64),
    pub window_mass: f64,
    pub peaks: usize,
}

/// Finds a window `I` where the smoothed density of `U(β,0)⁺` stays within
/// `[1/S, S]` at scales `ε` and `ε/2` away from point-mass peaks, then
/// evaluates the constants over a `λ` grid in `[π/6, π/2]`.
pub fn estimate_constants(params: &ModelParams, cfg: &ConstantsConfig) -> Result<Constants> {
    if !(cfg.min_mass > 0.0 && cfg.min_mass <= 1.0) {
        return Err(invalid("min_mass", format!("{} is outside (0, 1]", cfg.min_mass)));
    }
    if cfg.n_lambda < 2 {
        return Err(invalid("n_lambda", "need at least 2 values"));
    }
    let p0 = params.with_theta(0.0)?.with_lambda(0.0)?;
    let mu0 = eigendecompose(&assemble_half(&p0, cfg.n_dim, Boundary::Closed)?, 0)?;
    let eps = cfg.epsilon;
    let m = Float::ceil(TAU / (eps / 4.0)) as usize;
    let h = TAU / m as f64;
    let grid: Vec<f64> = (0..m).map(|i| h * i as f64).collect();
    let d1 = grid.iter().map(|&e| density(&mu0, e, eps)).collect::<Result<Vec<_>>>()?;
    let d2 = grid.iter().map(|&e| density(&mu0, e, eps / 2.0)).collect::<Result<Vec<_>>>()?;
    let peaks: Vec<usize> = (0..m).filter(|&i| d2[i] > 2.0 && d2[i] > 1.6 * d1[i]).collect();
    let reach = Float::ceil(cfg.peak_distance / h) as usize;
    let mut excluded = vec![false; m];
    for &pk in &peaks {
        for off in 0..=reach.min(m) {
            excluded[(pk + off) % m] = true;
            excluded[(pk + m - off % m) % m] = true;
        }
    }
    let mut s = 2.0;
    let chosen = loop {
        if s > cfg.max_s {
            return Err(Error::Construction(format!(
                "no density window with mass ≥ {} for S ≤ {}; relax epsilon, min_mass or peak_distance",
                cfg.min_mass, cfg.max_s
            )));
        }
        let ok: Vec<bool> = (0..m)
            .map(|i| !excluded[i] && [d1[i], d2[i]].iter().all(|&d| d >= 1.0 / s && d <= s))
            .collect();
        if let Some(window) = longest_arc(&ok, h) {
            let mass = mu0.restrict(|e| arc_contains(window, e)).mass();
            if mass >= cfg.min_mass {
                break (window, mass);
            }
        }
        s *= 2.0;
    };
    let (window, window_mass) = chosen;
    let (mut c1sq, mut c2sq) = (f64::INFINITY, 0.0f64);
    for j in 0..cfg.n_lambda {
        let lambda = FRAC_PI_6 + (FRAC_PI_2 - FRAC_PI_6) * j as f64 / (cfg.n_lambda - 1) as f64;
        let mu = eigendecompose(&assemble_rank_one(&p0.with_lambda(lambda)?, cfg.n_dim, Boundary::Closed)?, 0)?;
        let part = mu.restrict(|e| arc_contains(window, e));
        c1sq = c1sq.min(part.mass());
        c2sq = c2sq.max(sup_density(&part, window, eps)?);
    }
    Ok(Constants {
        c1: Float::sqrt(c1sq),
        c2: Float::sqrt(c2sq),
        s,
        window,
        window_mass,
        peaks: peaks.len(),
    })
}

/// Longest circular run of accepted grid points as an arc `(a, b)`.
fn longest_arc(ok: &[bool], h: f64) -> Option<(f64, f64)> {
    let m = ok.len();
    if ok.iter().all(|&o| o) {
        return Some((0.0, TAU));
    }
    let start = ok.iter().position(|&o| !o)?;
    let (mut best, mut run_start, mut run) = ((0usize, 0usize), 0usize, 0usize);
    for step in 1..=m {
        let i = (start + step) % m;
        if ok[i] {
            if run == 0 {
                run_start = i;
            }
            run += 1;
            if run > best.1 {
                best = (run_start, run);
            }
        } else {
            run = 0;
        }
    }
    (best.1 >= 2).then(|| {
        let a = h * best.0 as f64;
        (a, a + h * (best.1 - 1) as f64)
    })
}

/// `2 · 4^n (2n² - n) · 2π |Δβ|`.
pub fn drift_bound(n: u32, dbeta: f64) -> f64 {
    let nf = n as f64;
    2.0 * Float::powi(4.0, n as i32) * (2.0 * nf * nf - nf) * TAU * Float::abs(dbeta)
}

/// Measured difference against the bound at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftRow {
    pub n: u32,
    pub difference: f64,
    pub bound: f64,
    /// `difference / bound`, zero when both vanish.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftReport {
    pub rows: Vec<DriftRow>,
    pub violations: usize,
}

/// `β - β'` with exact subtraction when both are dyadic.
pub fn beta_difference(a: &BetaValue, b: &BetaValue) -> f64 {
    match (a, b) {
        (BetaValue::Exact(x), BetaValue::Exact(y)) => (x - y).to_f64(),
        _ => a.to_f64() - b.to_f64(),
    }
}

/// Evolves `φ_1` under `U_λ(β,θ)⁺` and `U_λ(β',θ)⁺` and compares
/// `‖ψ_β(n) - ψ_β'(n)‖` with [`drift_bound`] for `1 ≤ n ≤ n_max`.
pub fn drift_check(p: &ModelParams, q: &ModelParams, n_max: u32) -> Result<DriftReport> {
    let same = p.t() == q.t() && p.theta() == q.theta() && p.lambda() == q.lambda() && p.alpha() == q.alpha();
    if !same {
        return Err(invalid("params", "only β may differ between the two operators"));
    }
    if n_max < 1 {
        return Err(invalid("n_max", "must be at least 1"));
    }
    let n_dim = required_dimension(n_max as usize);
    let (u, v) = (
        assemble_rank_one(p, n_dim, Boundary::Open)?,
        assemble_rank_one(q, n_dim, Boundary::Open)?,
    );
    let dbeta = beta_difference(p.beta(), q.beta());
    let mut x = StateVector::basis(u.geometry(), 1)?.amplitudes().to_vec();
    let mut y = x.clone();
    let mut tmp = x.clone();
    let mut rows = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max {
        u.matvec(&x, &mut tmp);
        core::mem::swap(&mut x, &mut tmp);
        v.matvec(&y, &mut tmp);
        core::mem::swap(&mut y, &mut tmp);
        let difference = Float::sqrt(x.iter().zip(&y).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>());
        let bound = drift_bound(n, dbeta);
        let ratio = if bound > 0.0 { difference / bound } else if difference == 0.0 { 0.0 } else { f64::INFINITY };
        rows.push(DriftRow { n, difference, bound, ratio });
    }
    let violations = rows.iter().filter(|r| r.difference > r.bound * (1.0 + 1e-12) + 1e-14).count();
    Ok(DriftReport { rows, violations })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    /// `T_m` from the admissibility inequality with estimated constants.
    Rigorous,
    /// Smallest `T_m` at which the tail-average condition passes on all samples.
    #[default]
    Empirical,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstructionConfig {
    pub mode: Mode,
    /// Transmission amplitude and α; θ and λ come from the samples.
    pub t: f64,
    pub alpha: f64,
    pub seed: Dyadic,
    pub n_stages: u32,
    pub n_samples: usize,
    pub max_t: u64,
    pub max_dim: usize,
    pub constants: ConstantsConfig,
    /// Replaces the estimated `(c1, c2)` in rigorous mode.
    pub forced_constants: Option<(f64, f64)>,
}

impl Default for ConstructionConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Empirical,
            t: Float::sqrt(0.5),
            alpha: 0.0,
            seed: Dyadic::one(),
            n_stages: 3,
            n_samples: 5,
            max_t: 1 << 16,
            max_dim: 1 << 19,
            constants: ConstantsConfig::default(),
            forced_constants: None,
        }
    }
}

/// Stages produced, plus the error that stopped the run early, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstructionOutcome {
    pub stages: Vec<BetaStage>,
    pub halted: Option<Error>,
}

fn stage_params(cfg: &ConstructionConfig, beta: &Dyadic) -> Result<ModelParams> {
    crate::model::make_params(cfg.t, cfg.alpha, 0.0, 0.0, BetaValue::Exact(beta.clone()))
}

/// Smallest `T ≥ t_min` at which every sample passes, scanning the windows
/// `[t_min]`, `(t_min, 2 t_min]`, `(2 t_min, 4 t_min]`, …; returns `T` with
/// the per-sample checks at `T`.
pub fn empirical_t(
    params: &ModelParams,
    samples: &[(f64, f64)],
    t_min: u64,
    max_t: u64,
    max_dim: usize,
    runner: &dyn SampleRunner,
) -> Result<(u64, Verification)> {
    let (mut lo, mut hi) = (t_min.max(2), t_min.max(2));
    loop {
        if hi > max_t {
            return Err(Error::Budget(format!("no T ≤ {max_t} passes all samples")));
        }
        let ts: Vec<usize> = (lo as usize..=hi as usize).collect();
        let lhs = tail_scan(params, samples, &ts, max_dim, runner)?;
        if let Some(k) = (0..ts.len()).find(|&k| {
            let th = condition_threshold(ts[k] as u64);
            lhs.iter().all(|row| row[k] >= th)
        }) {
            let t = ts[k] as u64;
            let lhs: Vec<f64> = lhs.iter().map(|row| row[k]).collect();
            return Ok((t, checks_from(samples, &lhs, t)));
        }
        lo = hi + 1;
        hi = (2 * hi).min(max_t.max(lo));
        if lo > max_t {
            return Err(Error::Budget(format!("no T ≤ {max_t} passes all samples")));
        }
    }
}

/// Runs (or resumes from `history`) the staged construction up to
/// `cfg.n_stages` stages. `on_stage` sees every stage as soon as it is final.
pub fn run_construction(
    cfg: &ConstructionConfig,
    history: Vec<BetaStage>,
    runner: &dyn SampleRunner,
    on_stage: &mut dyn FnMut(&BetaStage) -> Result<()>,
) -> Result<ConstructionOutcome> {
    audit(&history)?;
    let samples = halton_samples(cfg.n_samples);
    let mut stages = history;
    while (stages.len() as u32) < cfg.n_stages {
        match build_stage(cfg, &stages, &samples, runner) {
            Ok(stage) => {
                on_stage(&stage)?;
                stages.push(stage);
            }
            Err(e @ (Error::Budget(_) | Error::Construction(_))) => {
                return Ok(ConstructionOutcome { stages, halted: Some(e) })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ConstructionOutcome { stages, halted: None })
}

fn build_stage(
    cfg: &ConstructionConfig,
    stages: &[BetaStage],
    samples: &[(f64, f64)],
    runner: &dyn SampleRunner,
) -> Result<BetaStage> {
    let beta = stages.last().map_or_else(|| cfg.seed.clone(), |s| s.next_beta.clone());
    let t_min = stages.last().map_or(2, |s| 2 * s.t);
    let params = stage_params(cfg, &beta)?;
    let (t, c1, c2, verification) = match cfg.mode {
        Mode::Rigorous => {
            let (c1, c2) = match cfg.forced_constants {
                Some(c) => c,
                None => {
                    let k = estimate_constants(&params, &cfg.constants)?;
                    (k.c1, k.c2)
                }
            };
            let t = select_t(c1, c2, &LogFifthRoot, t_min, cfg.max_t)?;
            let v = verify_stage(&params, t, samples, cfg.max_dim, runner)?;
            (t, Some(c1), Some(c2), v)
        }
        Mode::Empirical => {
            let (t, v) = empirical_t(&params, samples, t_min, cfg.max_t, cfg.max_dim, runner)?;
            (t, None, None, v)
        }
    };
    let delta = delta(t, &LogFifthRoot)?;
    let mut betas: Vec<Dyadic> = stages.iter().map(|s| s.beta.clone()).collect();
    let mut deltas: Vec<DeltaValue> = stages.iter().map(|s| s.delta.clone()).collect();
    betas.push(beta.clone());
    deltas.push(delta.clone());
    let (next, kappa) = next_beta(&betas, &deltas)?;
    Ok(BetaStage {
        m: stages.len() as u32 + 1,
        beta,
        t,
        delta,
        kappa,
        next_beta: next,
        c1,
        c2,
        verification,
    })
}

/// Result of re-checking a stage list from its own records.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    /// Human-readable line per checked inequality.
    pub lines: Vec<String>,
}

/// Re-checks conditions (i) and (iii), the exact Δ sums and the monotonicity
/// of `T`, `Δ` and `κ` using exact arithmetic on the stored dyadics.
pub fn audit(stages: &[BetaStage]) -> Result<AuditReport> {
    let mut lines = Vec::new();
    let fail = |msg: String| Err(Error::Construction(msg));
    for (i, s) in stages.iter().enumerate() {
        if s.m as usize != i + 1 {
            return fail(format!("stage {} recorded as m = {}", i + 1, s.m));
        }
        let fresh = delta(s.t, &LogFifthRoot)?;
        if fresh.sum != s.delta.sum || fresh.lower_exponent != s.delta.lower_exponent {
            return fail(format!("stage {}: stored Δ does not match T = {}", s.m, s.t));
        }
        let exp = factorial(s.kappa).ok_or_else(|| Error::Construction("κ! overflows".into()))?;
        if s.next_beta != s.beta.add_pow2(exp)? {
            return fail(format!("stage {}: β_(m+1) - β_m is not 2^-{}!", s.m, s.kappa));
        }
        lines.push(format!("(i) m={}: beta_next - beta = 2^-{}! = 2^-{}", s.m, s.kappa, exp));
        if i > 0 {
            let p = &stages[i - 1];
            if s.beta != p.next_beta {
                return fail(format!("stage {} does not start at the previous β_(m+1)", s.m));
            }
            if s.t < 2 * p.t || s.delta.log2 >= p.delta.log2 || s.kappa < p.kappa {
                return fail(format!("stage {}: T, Δ or κ not monotone", s.m));
            }
            lines.push(format!("monotone m={}: T {} >= 2*{}, kappa {} >= {}", s.m, s.t, p.t, s.kappa, p.kappa));
        } else if s.t < 2 {
            return fail("T_1 < 2".into());
        }
        for k in &stages[..=i] {
            let lb = k.delta.lower_bound()?;
            if !((&s.next_beta - &k.beta).abs() < lb) {
                return fail(format!("(iii) fails for m={}, k={}", s.m, k.m));
            }
            lines.push(format!(
                "(iii) m={} k={}: |beta_(m+1) - beta_k| < 2^{} <= Delta_k",
                s.m, k.m, k.delta.lower_exponent
            ));
        }
    }
    Ok(AuditReport { lines })
}

/// `⟨X²⟩(n) f(n)^5 / n²` for `U_λ(β,θ)⁺` from `φ_1`, read at each `n` in `ns`.
pub fn instability_at(params: &ModelParams, ns: &[u64]) -> Result<Vec<f64>> {
    let n_max = ns.iter().copied().max().unwrap_or(0) as usize;
    let n_dim = required_dimension(n_max);
    let u = assemble_rank_one(params, n_dim, Boundary::Open)?;
    let psi = StateVector::basis(Geometry::HalfLine { sites: n_dim }, 1)?;
    let series = evolve_moments(&u, &psi, n_max, &[2], &LogFifthRoot)?;
    let ratios = instability_ratio(&series, &LogFifthRoot)?;
    Ok(ns.iter().map(|&n| ratios[n as usize].f5_over_n2).collect())
}
