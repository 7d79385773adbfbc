//! Spectral measures of unitary truncations with respect to a basis vector,
//! their Cauchy and Borel transforms, the rank-one (Clark) transforms, Poisson
//! smoothed densities, spectral averaging, cyclicity and eigenvector decay.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use num_traits::Float;

use crate::cocycle::{decay_rate, fit_slope};
use crate::error::{invalid, Error, Result};
use crate::evolution::{Profile, StateVector};
use crate::model::{cis, reduce_angle, ModelParams};
use crate::operator::{assemble_half, assemble_rank_one, BandedUnitary, Boundary, Geometry};

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Largest dimension handed to the dense eigensolver by default.
pub const DENSE_LIMIT: usize = 2048;

/// Eigenphases `E_j ∈ [0, 2π)` (ascending) and unit eigenvectors of a unitary truncation.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    geometry: Geometry,
    phases: Vec<f64>,
    vectors: DMatrix<Complex64>,
    max_residual: f64,
}

impl EigenSystem {
    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Eigenvector `j` as a column.
    pub fn vector(&self, j: usize) -> DVector<Complex64> {
        self.vectors.column(j).into_owned()
    }

    pub fn vectors(&self) -> &DMatrix<Complex64> {
        &self.vectors
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn max_residual(&self) -> f64 {
        self.max_residual
    }

    /// Spectral measure of the basis vector at storage index `ref_index`.
    pub fn measure(&self, ref_index: usize) -> SpectralMeasure {
        let weights = (0..self.phases.len())
            .map(|j| self.vectors[(ref_index, j)].norm_sqr())
            .collect();
        SpectralMeasure {
            phases: self.phases.clone(),
            weights,
        }
    }

    /// Spectral measure of an arbitrary vector.
    pub fn measure_of(&self, v: &DVector<Complex64>) -> SpectralMeasure {
        let weights = (0..self.phases.len())
            .map(|j| self.vectors.column(j).dotc(v).norm_sqr())
            .collect();
        SpectralMeasure {
            phases: self.phases.clone(),
            weights,
        }
    }

    /// Spectral projection of `v` onto the eigenphases accepted by `inside`.
    pub fn project(&self, v: &DVector<Complex64>, inside: impl Fn(f64) -> bool) -> DVector<Complex64> {
        let mut out = DVector::zeros(v.len());
        for (j, &e) in self.phases.iter().enumerate() {
            if inside(e) {
                let col = self.vectors.column(j);
                out += col * col.dotc(v);
            }
        }
        out
    }
}

/// Dense Schur decomposition of a closed (exactly unitary) truncation. The
/// Schur form of a unitary matrix is diagonal, so the Schur vectors are the
/// eigenvectors; every residual `‖U v_j - e^{iE_j} v_j‖` is checked against `1e-10`.
pub fn eigensystem(u: &BandedUnitary, dense_limit: usize) -> Result<EigenSystem> {
    if u.boundary() != Boundary::Closed {
        return Err(invalid("boundary", "spectral computations need a closed truncation"));
    }
    let n = u.n_dim();
    if n > dense_limit {
        return Err(Error::Resource(format!("dimension {n} exceeds the dense limit {dense_limit}")));
    }
    let schur = Schur::try_new(u.to_dense(), 1e-15, 100 * n.max(10))
        .ok_or_else(|| Error::Numeric("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let mut order: Vec<(f64, usize)> = (0..n).map(|j| (reduce_angle(t[(j, j)].arg()), j)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let phases: Vec<f64> = order.iter().map(|o| o.0).collect();
    let mut vectors = DMatrix::zeros(n, n);
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    let mut max_residual: f64 = 0.0;
    for (k, &(e, j)) in order.iter().enumerate() {
        let col = q.column(j);
        let norm = col.norm();
        for i in 0..n {
            x[i] = col[i] / norm;
            vectors[(i, k)] = x[i];
        }
        u.matvec(&x, &mut y);
        let lam = cis(e);
        let res = Float::sqrt(x.iter().zip(&y).map(|(a, b)| (b - lam * a).norm_sqr()).sum::<f64>());
        if !(res < 1e-10) {
            return Err(Error::Numeric(format!(
                "eigenpair {k} (E = {e}) has residual {res:e}"
            )));
        }
        max_residual = max_residual.max(res);
    }
    Ok(EigenSystem {
        geometry: u.geometry(),
        phases,
        vectors,
        max_residual,
    })
}

/// Spectral measure of the basis vector at `ref_index`.
pub fn eigendecompose(u: &BandedUnitary, ref_index: usize) -> Result<SpectralMeasure> {
    Ok(eigensystem(u, DENSE_LIMIT)?.measure(ref_index))
}

/// Point measure `Σ w_j δ_{E_j}` on the circle, phases ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralMeasure {
    phases: Vec<f64>,
    weights: Vec<f64>,
}

impl SpectralMeasure {
    pub fn new(mut pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.iter().any(|p| !p.0.is_finite() || !(p.1 >= 0.0)) {
            return Err(invalid("measure", "phases must be finite and weights non-negative"));
        }
        for p in &mut pairs {
            p.0 = reduce_angle(p.0);
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self {
            phases: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `∫ g dμ`.
    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.phases.iter().zip(&self.weights).map(|(&e, &w)| w * g(e)).sum()
    }

    /// `∫ e^{ikE} dμ(E)`.
    pub fn moment(&self, k: i64) -> Complex64 {
        self.phases
            .iter()
            .zip(&self.weights)
            .map(|(&e, &w)| w * cis(k as f64 * e))
            .sum()
    }

    /// The part of the measure on the phases accepted by `inside`.
    pub fn restrict(&self, inside: impl Fn(f64) -> bool) -> Self {
        let (phases, weights) = self
            .phases
            .iter()
            .zip(&self.weights)
            .map(|(&e, &w)| (e, if inside(e) { w } else { 0.0 }))
            .unzip();
        Self { phases, weights }
    }
}

fn check_off_circle(z: Complex64) -> Result<()> {
    if Float::abs(z.norm() - 1.0) <= 1e-12 {
        return Err(Error::Domain(format!("|z| = {} lies on the unit circle", z.norm())));
    }
    Ok(())
}

/// `F_μ(z) = ∫ (e^{iE} + z)/(e^{iE} - z) dμ(E)`.
pub fn cauchy(mu: &SpectralMeasure, z: Complex64) -> Result<Complex64> {
    check_off_circle(z)?;
    Ok(mu
        .phases
        .iter()
        .zip(&mu.weights)
        .map(|(&e, &w)| {
            let x = cis(e);
            w * (x + z) / (x - z)
        })
        .sum())
}

/// `R_μ(z) = ∫ 1/(e^{iE} - z) dμ(E)`.
pub fn borel(mu: &SpectralMeasure, z: Complex64) -> Result<Complex64> {
    check_off_circle(z)?;
    Ok(mu
        .phases
        .iter()
        .zip(&mu.weights)
        .map(|(&e, &w)| w / (cis(e) - z))
        .sum())
}

fn is_pi(lambda: f64) -> bool {
    Float::abs(reduce_angle(lambda) - PI) < 1e-15
}

/// `F_λ = ((e^{iλ}-1) + (e^{iλ}+1) F_0) / ((e^{iλ}+1) + (e^{iλ}-1) F_0)`; at `λ = π`
/// this is `1/F_0`.
pub fn clark_transform(f0: Complex64, lambda: f64) -> Result<Complex64> {
    if is_pi(lambda) {
        if f0.norm() < 1e-14 {
            return Err(Error::Pole("F_0 vanishes at λ = π".into()));
        }
        return Ok(ONE / f0);
    }
    let e = cis(lambda);
    let den = (e + 1.0) + (e - 1.0) * f0;
    if den.norm() < 1e-14 {
        return Err(Error::Pole(format!("vanishing denominator at λ = {lambda}")));
    }
    Ok(((e - 1.0) + (e + 1.0) * f0) / den)
}

/// `Re F_λ` from `F_0`: `(1+y²) Re F_0 / |1 + i y F_0|²` with `y = sin λ/(1 + cos λ)`,
/// and `Re F_0 / |F_0|²` at `λ = π`.
pub fn clark_real_part(f0: Complex64, lambda: f64) -> Result<f64> {
    if is_pi(lambda) {
        let m = f0.norm_sqr();
        if m < 1e-28 {
            return Err(Error::Pole("F_0 vanishes at λ = π".into()));
        }
        return Ok(f0.re / m);
    }
    let (s, c) = libm::sincos(lambda);
    let y = s / (1.0 + c);
    let den = (ONE + Complex64::new(0.0, y) * f0).norm_sqr();
    if den < 1e-28 {
        return Err(Error::Pole(format!("vanishing denominator at λ = {lambda}")));
    }
    Ok((1.0 + y * y) * f0.re / den)
}

/// `R_λ = R_0 / (e^{iλ} + z (e^{iλ} - 1) R_0)`.
pub fn clark_borel(r0: Complex64, z: Complex64, lambda: f64) -> Result<Complex64> {
    let e = cis(lambda);
    let den = e + z * (e - 1.0) * r0;
    if den.norm() < 1e-14 {
        return Err(Error::Pole(format!("vanishing denominator at λ = {lambda}")));
    }
    Ok(r0 / den)
}

/// Largest deviations between the directly computed transforms of `μ_λ` and
/// the ones obtained from `μ_0` through the rank-one formulas.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClarkErrors {
    pub cauchy: f64,
    pub borel: f64,
    pub real_part: f64,
    /// `max |F - 2zR - 1|` over both measures.
    pub relation: f64,
}

pub fn clark_consistency(params: &ModelParams, n_dim: usize, lambda: f64, z_grid: &[Complex64]) -> Result<ClarkErrors> {
    let base = params.with_lambda(0.0)?;
    let mu0 = eigendecompose(&assemble_half(&base, n_dim, Boundary::Closed)?, 0)?;
    let mul = eigendecompose(&assemble_rank_one(&base.with_lambda(lambda)?, n_dim, Boundary::Closed)?, 0)?;
    clark_errors(&mu0, &mul, lambda, z_grid)
}

/// [`clark_consistency`] on given measures.
pub fn clark_errors(
    mu0: &SpectralMeasure,
    mul: &SpectralMeasure,
    lambda: f64,
    z_grid: &[Complex64],
) -> Result<ClarkErrors> {
    let mut out = ClarkErrors::default();
    for &z in z_grid {
        let (f0, r0) = (cauchy(mu0, z)?, borel(mu0, z)?);
        let (fl, rl) = (cauchy(mul, z)?, borel(mul, z)?);
        out.cauchy = out.cauchy.max((fl - clark_transform(f0, lambda)?).norm());
        out.borel = out.borel.max((rl - clark_borel(r0, z, lambda)?).norm());
        out.real_part = out.real_part.max(Float::abs(fl.re - clark_real_part(f0, lambda)?));
        let rel = (f0 - 2.0 * z * r0 - 1.0).norm().max((fl - 2.0 * z * rl - 1.0).norm());
        out.relation = out.relation.max(rel);
    }
    Ok(out)
}

/// `n` equally spaced points on the circle of the given radius.
pub fn circle_grid(radius: f64, n: usize) -> Vec<Complex64> {
    (0..n).map(|k| radius * cis(TAU * k as f64 / n as f64)).collect()
}

/// `(lhs, rhs)` of spectral averaging with the `dλ/2π` normalization:
/// `lhs = (1/n) Σ_i ∫ g dμ_{λ_i}` over `λ_i = 2π i/n`, `rhs = ∫ g dE/2π`.
pub fn spectral_average(
    params: &ModelParams,
    n_dim: usize,
    g: &dyn Fn(f64) -> f64,
    n_lambda: usize,
) -> Result<(f64, f64)> {
    if n_lambda < 8 {
        return Err(invalid("n_lambda", format!("{n_lambda} is below 8")));
    }
    let mut lhs = 0.0;
    for i in 0..n_lambda {
        let p = params.with_lambda(TAU * i as f64 / n_lambda as f64)?;
        let mu = eigendecompose(&assemble_rank_one(&p, n_dim, Boundary::Closed)?, 0)?;
        lhs += mu.integrate(g);
    }
    Ok((lhs / n_lambda as f64, circle_mean(g, 4096)))
}

/// `∫_0^{2π} g dE/2π` by the periodic trapezoidal rule.
pub fn circle_mean(g: &dyn Fn(f64) -> f64, n: usize) -> f64 {
    (0..n).map(|k| g(TAU * k as f64 / n as f64)).sum::<f64>() / n as f64
}

/// Indicator of `[a, b]` smoothed by the Fejér kernel of the given degree.
pub fn fejer_indicator(a: f64, b: f64, degree: usize) -> impl Fn(f64) -> f64 {
    let width = b - a;
    move |e: f64| {
        let mut v = width / TAU;
        for k in 1..=degree {
            let kf = k as f64;
            let damp = 1.0 - kf / (degree as f64 + 1.0);
            // 2 Re(c_k e^{ikE}) with c_k = (e^{-ika} - e^{-ikb}) / (2π i k)
            let ck = (cis(-kf * a) - cis(-kf * b)) / Complex64::new(0.0, TAU * kf);
            v += 2.0 * damp * (ck * cis(kf * e)).re;
        }
        v
    }
}

/// Poisson-smoothed density `Re F_μ((1-ε) e^{iE})`.
pub fn density(mu: &SpectralMeasure, e: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(invalid("epsilon", format!("{epsilon} is outside (0, 0.5)")));
    }
    let r = 1.0 - epsilon;
    // Re (x + z)/(x - z) = (1 - r²) / |x - z|² for |x| = 1
    Ok(mu
        .phases
        .iter()
        .zip(&mu.weights)
        .map(|(&p, &w)| w * (1.0 - r * r) / (1.0 + r * r - 2.0 * r * Float::cos(e - p)))
        .sum())
}

/// `max_E |ω_θ(E) - ω_0(E + 2θ)|` on a 256-point grid, where `ω` is the
/// smoothed density of `φ_1` for `U(β,θ)⁺`.
pub fn covariance_density_check(params: &ModelParams, n_dim: usize, epsilon: f64, theta: f64) -> Result<f64> {
    let p = params.with_lambda(0.0)?;
    let mu_t = eigendecompose(&assemble_half(&p.with_theta(theta)?, n_dim, Boundary::Closed)?, 0)?;
    let mu_0 = eigendecompose(&assemble_half(&p.with_theta(0.0)?, n_dim, Boundary::Closed)?, 0)?;
    let mut worst: f64 = 0.0;
    for k in 0..256 {
        let e = TAU * k as f64 / 256.0;
        let d = density(&mu_t, e, epsilon)? - density(&mu_0, e + 2.0 * theta, epsilon)?;
        worst = worst.max(Float::abs(d));
    }
    Ok(worst)
}

/// Dimension of `span{U^j φ: |j| ≤ n_krylov}`, with negative powers applied
/// through `U†`. The family is orthonormalized as it grows (forward and
/// backward directions interleaved, two Gram-Schmidt passes); a direction
/// stops once its new component falls below `1e-8` of a unit vector. The raw
/// power family loses rank in floating point because its new components
/// shrink geometrically.
pub fn cyclicity_rank(u: &BandedUnitary, phi_index: usize, n_krylov: usize) -> Result<usize> {
    let n = u.n_dim();
    if phi_index >= n {
        return Err(invalid("phi_index", "outside the truncation"));
    }
    let mut phi = vec![Complex64::new(0.0, 0.0); n];
    phi[phi_index] = ONE;
    let mut basis: Vec<Vec<Complex64>> = vec![phi.clone()];
    let mut last = [phi.clone(), phi];
    let mut open = [true, true];
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    for _ in 0..n_krylov {
        for dir in 0..2 {
            if !open[dir] || basis.len() == n {
                continue;
            }
            if dir == 0 {
                u.matvec(&last[0], &mut w);
            } else {
                u.adjoint_matvec(&last[1], &mut w);
            }
            for _ in 0..2 {
                for q in &basis {
                    let c: Complex64 = q.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
                    for (x, y) in w.iter_mut().zip(q) {
                        *x -= c * y;
                    }
                }
            }
            let norm = Float::sqrt(w.iter().map(|x| x.norm_sqr()).sum::<f64>());
            if norm > 1e-8 {
                let q: Vec<Complex64> = w.iter().map(|x| x / norm).collect();
                last[dir] = q.clone();
                basis.push(q);
            } else {
                open[dir] = false;
            }
        }
    }
    Ok(basis.len())
}

/// How an eigenvector decay rate was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitKind {
    /// Least-squares envelope slope over at least 16 pairs.
    Envelope,
    /// The vector falls below the noise floor within 16 pairs; the rate is
    /// `ln(floor) / (2 · pairs above the floor)`.
    Floor,
}

/// Decay record of one eigenvector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenRecord {
    pub phase: f64,
    pub weight: f64,
    pub decay_rate: f64,
    pub fit: FitKind,
    pub ipr: f64,
    pub boundary_flag: bool,
    /// Storage index of the largest amplitude.
    pub peak: usize,
}

/// Policy for the localization fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizationPolicy {
    /// Mass fraction in the edge sites above which a vector is flagged.
    pub boundary_mass: f64,
    pub boundary_sites: usize,
    /// Relative amplitude below which the envelope is treated as noise.
    pub noise_floor: f64,
}

impl Default for LocalizationPolicy {
    fn default() -> Self {
        Self {
            boundary_mass: 0.05,
            boundary_sites: 10,
            noise_floor: 1e-12,
        }
    }
}

/// Inverse participation ratio, decay rate and boundary flag of every
/// eigenvector. The envelope is taken over site pairs, starting at the peak
/// and running towards the longer side until it drops below the noise floor.
pub fn localization_profile(es: &EigenSystem, ref_index: usize, policy: &LocalizationPolicy) -> Vec<EigenRecord> {
    let n = es.phases.len();
    let half = es.geometry.is_half_line();
    (0..n)
        .map(|j| {
            let v = es.vectors.column(j);
            let mass: Vec<f64> = v.iter().map(|x| x.norm_sqr()).collect();
            let ipr = mass.iter().map(|m| m * m).sum();
            let edge = policy.boundary_sites.min(n);
            let mut edge_mass: f64 = mass[n - edge..].iter().sum();
            if !half {
                edge_mass = edge_mass.max(mass[..edge].iter().sum());
            }
            let peak = (0..n).fold(0, |b, i| if mass[i] > mass[b] { i } else { b });
            let (decay_rate, fit) = envelope_rate(&mass, peak, policy.noise_floor);
            EigenRecord {
                phase: es.phases[j],
                weight: mass[ref_index],
                decay_rate,
                fit,
                ipr,
                boundary_flag: edge_mass >= policy.boundary_mass,
                peak,
            }
        })
        .collect()
}

fn envelope_rate(mass: &[f64], peak: usize, floor: f64) -> (f64, FitKind) {
    let n = mass.len();
    let pk = peak / 2;
    let n_pairs = n / 2;
    let pair = |p: usize| mass[2 * p] + mass.get(2 * p + 1).copied().unwrap_or(0.0);
    let rightward = n_pairs - pk > pk;
    let seq: Vec<f64> = if rightward {
        (pk..n_pairs).map(pair).collect()
    } else {
        (0..=pk).rev().map(pair).collect()
    };
    let top = seq[0].max(f64::MIN_POSITIVE);
    let cut = floor * floor * top;
    let above = seq.iter().take_while(|&&m| m > cut).count();
    if above >= 16 {
        let coeffs: Vec<Complex64> = seq[..above]
            .iter()
            .flat_map(|&m| [Complex64::new(Float::sqrt(m), 0.0), Complex64::new(0.0, 0.0)])
            .collect();
        if let Ok(r) = decay_rate(&coeffs) {
            return (r, FitKind::Envelope);
        }
    }
    (Float::ln(floor) / (2.0 * above.max(1) as f64), FitKind::Floor)
}

/// Slope of `ln |v|` against site index over a range of storage indices.
pub fn log_slope(v: &[Complex64], range: core::ops::Range<usize>) -> Result<f64> {
    let pts: Vec<(f64, f64)> = range
        .filter(|&i| v[i].norm() > 0.0)
        .map(|i| (i as f64, Float::ln(v[i].norm())))
        .collect();
    fit_slope(&pts)
}

/// `‖g‖_∞` estimate: the largest smoothed density of `μ` on a grid over
/// `[a, b]` with spacing at most `ε/4`.
pub fn sup_density(mu: &SpectralMeasure, window: (f64, f64), epsilon: f64) -> Result<f64> {
    let (a, b) = window;
    if !(b > a) || b - a > TAU {
        return Err(invalid("window", format!("[{a}, {b}] is not a proper arc")));
    }
    let steps = ((b - a) / (epsilon / 4.0)).ceil().max(64.0) as usize;
    let mut best: f64 = 0.0;
    for k in 0..=steps {
        let e = a + (b - a) * k as f64 / steps as f64;
        best = best.max(density(mu, e, epsilon)?);
    }
    Ok(best)
}

/// Averaged head-projection bound for a spectrally windowed vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowDiagnostic {
    /// `(1/(T+1)) Σ_{j=T}^{2T} ‖P_{n < T/f(T)} U^j ψ‖²`.
    pub lhs: f64,
    /// `(2π/(T+1)) #{n < T/f(T)} ⟦ψ⟧²` with `⟦ψ⟧²` the sup of the smoothed density.
    pub rhs: f64,
    pub psi_norm_sqr: f64,
    pub triple_norm_sqr: f64,
}

impl WindowDiagnostic {
    pub fn holds_with_slack(&self, slack: f64) -> bool {
        self.lhs <= slack * self.rhs
    }
}

/// Evaluates the averaged bound for `ψ = P_I φ_1`, the spectral projection of
/// `φ_1` for `U_λ(β,θ)⁺` onto the arc `I`.
pub fn windowed_bound_diagnostic<F: Profile + ?Sized>(
    params: &ModelParams,
    n_dim: usize,
    window: (f64, f64),
    epsilon: f64,
    t: usize,
    f: &F,
) -> Result<WindowDiagnostic> {
    let u = assemble_rank_one(params, n_dim, Boundary::Closed)?;
    let es = eigensystem(&u, DENSE_LIMIT)?;
    let mut phi = DVector::zeros(n_dim);
    phi[0] = ONE;
    let inside = |e: f64| arc_contains(window, e);
    let psi = es.project(&phi, inside);
    let mu_psi = es.measure_of(&psi).restrict(inside);
    let triple = sup_density(&mu_psi, window, epsilon)?;
    let cut = t as f64 / f.value(t as f64);
    let head_sites = (1..=n_dim).filter(|&s| (s as f64) < cut).count();
    let mut state = StateVector::from_amplitudes(u.geometry(), psi.iter().copied().collect())?;
    let mut acc = 0.0;
    for j in 0..=2 * t {
        if j >= t {
            acc += state.amplitudes()[..head_sites].iter().map(|a| a.norm_sqr()).sum::<f64>();
        }
        if j < 2 * t {
            state = crate::evolution::step(&u, &state)?;
        }
    }
    let w = (t + 1) as f64;
    Ok(WindowDiagnostic {
        lhs: acc / w,
        rhs: TAU / w * head_sites as f64 * triple,
        psi_norm_sqr: psi.norm_squared(),
        triple_norm_sqr: triple,
    })
}

/// Whether `e` lies on the arc `[a, b]` taken modulo `2π`.
pub fn arc_contains(window: (f64, f64), e: f64) -> bool {
    let (a, b) = window;
    let d = reduce_angle(e - a);
    d <= b - a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_params, BetaValue};

    fn params(t: f64, beta: f64) -> ModelParams {
        make_params(t, 0.2, 0.9, 0.0, BetaValue::Float(beta)).unwrap()
    }

    /// Rank of the raw power family by SVD, usable while it stays well conditioned.
    fn svd_rank(u: &BandedUnitary, m: usize) -> usize {
        let n = u.n_dim();
        let d = u.to_dense();
        let mut k = DMatrix::<Complex64>::zeros(n, 2 * m + 1);
        let mut f = DVector::<Complex64>::zeros(n);
        f[0] = ONE;
        let mut b = f.clone();
        k.set_column(m, &f);
        for j in 1..=m {
            f = &d * f;
            b = d.adjoint() * b;
            k.set_column(m + j, &f);
            k.set_column(m - j, &b);
        }
        let sv = k.singular_values();
        let top = sv.max();
        sv.iter().filter(|&&x| x > 1e-8 * top).count()
    }

    #[test]
    fn cyclicity_extremes_and_generic() {
        let u = assemble_half(&params(0.0, 0.3), 16, Boundary::Closed).unwrap();
        assert_eq!(cyclicity_rank(&u, 0, 16).unwrap(), 1);
        let u = assemble_half(&params(Float::sqrt(0.5), 0.618), 64, Boundary::Closed).unwrap();
        assert_eq!(cyclicity_rank(&u, 0, 64).unwrap(), 64);
        for t in [0.6, 0.9] {
            let u = assemble_half(&params(t, 0.618), 10, Boundary::Closed).unwrap();
            assert_eq!(cyclicity_rank(&u, 0, 10).unwrap(), svd_rank(&u, 10));
            assert_eq!(svd_rank(&u, 10), 10);
        }
        let u = assemble_half(&params(0.8, 0.3), 12, Boundary::Closed).unwrap();
        assert_eq!(cyclicity_rank(&u, 0, 3).unwrap(), svd_rank(&u, 3));
    }

    #[test]
    fn open_truncation_rejected() {
        let u = assemble_half(&params(0.6, 0.3), 16, Boundary::Open).unwrap();
        assert!(eigensystem(&u, DENSE_LIMIT).is_err());
    }

    #[test]
    fn diagonal_case_has_point_weights() {
        let p = params(0.0, 0.3);
        let u = assemble_half(&p, 16, Boundary::Closed).unwrap();
        let mu = eigendecompose(&u, 0).unwrap();
        let ones = mu.weights().iter().filter(|w| (**w - 1.0).abs() < 1e-12).count();
        let zeros = mu.weights().iter().filter(|w| **w < 1e-12).count();
        assert_eq!((ones, zeros), (1, 15));
    }

    #[test]
    fn first_moment_is_matrix_element() {
        let p = params(0.7, 0.618);
        let u = assemble_half(&p, 64, Boundary::Closed).unwrap();
        let mu = eigendecompose(&u, 0).unwrap();
        assert!((mu.mass() - 1.0).abs() < 1e-10);
        assert!((mu.moment(1) - u.get(0, 0)).norm() < 1e-10);
        for w in mu.phases().windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn relation_and_domain() {
        let p = params(0.7, 0.618);
        let mu = eigendecompose(&assemble_half(&p, 32, Boundary::Closed).unwrap(), 0).unwrap();
        let z0 = Complex64::new(0.0, 0.0);
        assert!((cauchy(&mu, z0).unwrap() - 1.0).norm() < 1e-12);
        assert!((borel(&mu, z0).unwrap() - mu.moment(-1)).norm() < 1e-12);
        for z in circle_grid(0.9, 64) {
            let f = cauchy(&mu, z).unwrap();
            assert!((f - 2.0 * z * borel(&mu, z).unwrap() - 1.0).norm() < 1e-12);
            assert!(f.re > 0.0);
        }
        assert!(matches!(cauchy(&mu, cis(0.3)), Err(Error::Domain(_))));
    }

    #[test]
    fn clark_special_values() {
        let f0 = Complex64::new(0.7, -0.4);
        assert!((clark_transform(f0, 0.0).unwrap() - f0).norm() < 1e-15);
        assert!((clark_transform(f0, PI).unwrap() - ONE / f0).norm() < 1e-15);
        let want = 2.0 * f0.re / (ONE + Complex64::new(0.0, 1.0) * f0).norm_sqr();
        assert!((clark_real_part(f0, PI / 2.0).unwrap() - want).abs() < 1e-15);
        assert!((clark_transform(f0, PI / 2.0).unwrap().re - want).abs() < 1e-14);
    }

    #[test]
    fn clark_small_case() {
        let p = params(0.6, 0.618);
        let grid = circle_grid(0.9, 64);
        let e = clark_consistency(&p, 64, PI / 3.0, &grid).unwrap();
        assert!(e.cauchy < 1e-8 && e.borel < 1e-8 && e.real_part < 1e-8, "{e:?}");
        let e0 = clark_consistency(&p, 64, 0.0, &grid).unwrap();
        assert!(e0.cauchy < 1e-12);
    }

    #[test]
    fn density_of_uniform_and_point_masses() {
        let n = 2048;
        let uni = SpectralMeasure::new((0..n).map(|k| (TAU * k as f64 / n as f64, 1.0 / n as f64)).collect()).unwrap();
        assert!((density(&uni, 1.0, 0.05).unwrap() - 1.0).abs() < 1e-6);
        let pt = SpectralMeasure::new(vec![(0.5, 1.0)]).unwrap();
        let eps = 1e-3;
        let peak = density(&pt, 0.5, eps).unwrap();
        assert!((peak - (2.0 - eps) / eps).abs() < 1e-6 * peak);
        let total = circle_mean(&|e| density(&pt, e, 0.1).unwrap(), 4096);
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fejer_indicator_mean() {
        let g = fejer_indicator(1.0, 2.5, 16);
        assert!((circle_mean(&g, 1024) - 1.5 / TAU).abs() < 1e-14);
    }

    #[test]
    fn arcs_wrap() {
        assert!(arc_contains((6.0, 7.0), 0.5));
        assert!(!arc_contains((6.0, 7.0), 1.0));
        assert!(arc_contains((1.0, 2.0), 1.5));
    }
}
