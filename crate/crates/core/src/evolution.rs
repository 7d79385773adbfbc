//! Time evolution `ψ(n+1) = U ψ(n)` on banded truncations, energy moments,
//! tail projections and their time averages over `j ∈ [T, 2T]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::operator::{BandedUnitary, Geometry};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Edge amplitudes with `|ψ_k|²` below this are dropped from the active range.
pub const TRIM_NORM_SQR: f64 = 1e-300;

/// Growth profile `f(n)` used for tail thresholds `n / f(n)`.
pub trait Profile {
    fn value(&self, n: f64) -> f64;
}

/// `f(n) = (ln(2 + |n|))^{1/5}`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LogFifthRoot;

impl Profile for LogFifthRoot {
    fn value(&self, n: f64) -> f64 {
        Float::powf(Float::ln(2.0 + Float::abs(n)), 0.2)
    }
}

impl<F: Fn(f64) -> f64> Profile for F {
    fn value(&self, n: f64) -> f64 {
        self(n)
    }
}

/// Amplitudes over the sites of a truncation plus the number of steps taken.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    geometry: Geometry,
    amps: Vec<Complex64>,
    n: u64,
}

impl StateVector {
    /// The basis vector `φ_site`.
    pub fn basis(geometry: Geometry, site: i64) -> Result<Self> {
        let idx = geometry
            .index_of(site)
            .ok_or_else(|| invalid("site", format!("{site} lies outside the window")))?;
        let mut amps = vec![ZERO; geometry.n_dim()];
        amps[idx] = Complex64::new(1.0, 0.0);
        Ok(Self { geometry, amps, n: 0 })
    }

    pub fn from_amplitudes(geometry: Geometry, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != geometry.n_dim() {
            return Err(Error::DimensionTooSmall {
                have: amps.len(),
                need: geometry.n_dim(),
            });
        }
        Ok(Self { geometry, amps, n: 0 })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn steps(&self) -> u64 {
        self.n
    }

    pub fn at_site(&self, site: i64) -> Complex64 {
        self.geometry.index_of(site).map_or(ZERO, |i| self.amps[i])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn support(&self) -> Range<usize> {
        let lo = self.amps.iter().position(|a| *a != ZERO);
        let hi = self.amps.iter().rposition(|a| *a != ZERO);
        match (lo, hi) {
            (Some(lo), Some(hi)) => lo..hi + 1,
            _ => 0..0,
        }
    }
}

/// Dimension at which evolving `φ_1` for `n_steps` on the half line never
/// touches the truncation edge: `2 n_steps + 4`, at least the smallest
/// admissible truncation.
pub fn required_dimension(n_steps: usize) -> usize {
    (2 * n_steps + 4).max(8)
}

fn check_light_cone(u: &BandedUnitary, psi: &StateVector, n_steps: usize) -> Result<()> {
    let g = u.geometry();
    if g != psi.geometry {
        return Err(Error::Geometry("state and operator windows differ".into()));
    }
    let sup = psi.support();
    if sup.is_empty() {
        return Ok(());
    }
    let reach = 2 * n_steps as i64 + 2;
    let last = g.site_of(sup.end - 1);
    match g {
        Geometry::HalfLine { sites } => {
            let need = (last + reach + 1).max(required_dimension(n_steps) as i64) as usize;
            let need = need + need % 2;
            if sites < need {
                return Err(Error::DimensionTooSmall { have: sites, need });
            }
        }
        Geometry::FullLine { half_width } => {
            let first = g.site_of(sup.start);
            let w = (last.abs().max(first.abs()) + reach) as usize;
            if half_width < w {
                return Err(Error::DimensionTooSmall {
                    have: g.n_dim(),
                    need: 2 * w + 1,
                });
            }
        }
    }
    Ok(())
}

/// One application of `U`.
pub fn step(u: &BandedUnitary, psi: &StateVector) -> Result<StateVector> {
    if u.geometry() != psi.geometry {
        return Err(Error::Geometry("state and operator windows differ".into()));
    }
    let mut out = vec![ZERO; psi.amps.len()];
    u.matvec(&psi.amps, &mut out);
    Ok(StateVector {
        geometry: psi.geometry,
        amps: out,
        n: psi.n + 1,
    })
}

/// Light-cone restricted evolution with two reusable buffers.
pub struct Evolution<'a> {
    u: &'a BandedUnitary,
    cur: Vec<Complex64>,
    next: Vec<Complex64>,
    active: Range<usize>,
    n: u64,
}

impl<'a> Evolution<'a> {
    /// Starts an evolution that will run at most `n_max` steps; refuses when
    /// the light cone would reach the truncation edge.
    pub fn new(u: &'a BandedUnitary, psi0: &StateVector, n_max: usize) -> Result<Self> {
        check_light_cone(u, psi0, n_max)?;
        Ok(Self {
            u,
            cur: psi0.amps.clone(),
            next: vec![ZERO; psi0.amps.len()],
            active: psi0.support(),
            n: psi0.n,
        })
    }

    pub fn advance(&mut self) {
        let Range { mut start, mut end } = self.u.apply_range(&self.cur, &mut self.next, self.active.clone());
        // edge amplitudes this small would only feed subnormal arithmetic
        while start < end && self.next[start].norm_sqr() < TRIM_NORM_SQR {
            self.next[start] = ZERO;
            start += 1;
        }
        while end > start && self.next[end - 1].norm_sqr() < TRIM_NORM_SQR {
            end -= 1;
            self.next[end] = ZERO;
        }
        self.active = start..end;
        core::mem::swap(&mut self.cur, &mut self.next);
        self.n += 1;
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.cur
    }

    /// Storage indices that may hold nonzero amplitudes.
    pub fn active(&self) -> Range<usize> {
        self.active.clone()
    }

    pub fn steps(&self) -> u64 {
        self.n
    }

    pub fn state(&self) -> StateVector {
        StateVector {
            geometry: self.u.geometry(),
            amps: self.cur.clone(),
            n: self.n,
        }
    }

    fn weight(&self, i: usize) -> f64 {
        Float::abs(self.u.geometry().site_of(i) as f64)
    }

    fn moment(&self, m: u32) -> f64 {
        self.active
            .clone()
            .map(|i| Float::powi(self.weight(i), m as i32) * self.cur[i].norm_sqr())
            .sum()
    }

    fn tail(&self, a: f64) -> f64 {
        let g = self.u.geometry();
        self.active
            .clone()
            .filter(|&i| g.site_of(i) as f64 >= a)
            .map(|i| self.cur[i].norm_sqr())
            .sum()
    }
}

/// `Σ_{site ≥ a} |ψ_site|²`.
pub fn tail_mass(psi: &StateVector, a: f64) -> f64 {
    let g = psi.geometry;
    psi.amps
        .iter()
        .enumerate()
        .filter(|(i, _)| g.site_of(*i) as f64 >= a)
        .map(|(_, v)| v.norm_sqr())
        .sum()
}

/// `Σ_{site < a} |ψ_site|²`.
pub fn head_mass(psi: &StateVector, a: f64) -> f64 {
    let g = psi.geometry;
    psi.amps
        .iter()
        .enumerate()
        .filter(|(i, _)| (g.site_of(*i) as f64) < a)
        .map(|(_, v)| v.norm_sqr())
        .sum()
}

/// One row of a moment series.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentRow {
    pub n: u64,
    /// `⟨ψ(n), X^m ψ(n)⟩` for each requested order, in request order.
    pub moments: Vec<f64>,
    pub norm: f64,
    /// Mass beyond `n / f(n)` (all mass at `n = 0`).
    pub tail_mass: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentSeries {
    pub orders: Vec<u32>,
    pub rows: Vec<MomentRow>,
}

impl MomentSeries {
    /// Column of moment order `m`, if it was requested.
    pub fn moment(&self, m: u32) -> Option<Vec<f64>> {
        let j = self.orders.iter().position(|&o| o == m)?;
        Some(self.rows.iter().map(|r| r.moments[j]).collect())
    }
}

/// Moments `Σ w_k^m |ψ_k(n)|²` for `n = 0..=n_max` with `w_k = k` on the half
/// line and `w_k = |k|` on the full line.
pub fn evolve_moments<F: Profile + ?Sized>(
    u: &BandedUnitary,
    psi0: &StateVector,
    n_max: usize,
    orders: &[u32],
    f: &F,
) -> Result<MomentSeries> {
    let mut ev = Evolution::new(u, psi0, n_max)?;
    let mut rows = Vec::with_capacity(n_max + 1);
    loop {
        let n = ev.steps() - psi0.n;
        let a = if n == 0 { f64::NEG_INFINITY } else { n as f64 / f.value(n as f64) };
        rows.push(MomentRow {
            n,
            moments: orders.iter().map(|&m| ev.moment(m)).collect(),
            norm: Float::sqrt(ev.moment(0)),
            tail_mass: ev.tail(a),
        });
        if n as usize == n_max {
            break;
        }
        ev.advance();
    }
    Ok(MomentSeries {
        orders: orders.to_vec(),
        rows,
    })
}

/// Left side of the tail-average condition:
/// `(1/(T+1)) Σ_{j=T}^{2T} ‖P_{n ≥ T/f(T)} U^j ψ0‖²`.
pub fn time_avg_tail<F: Profile + ?Sized>(u: &BandedUnitary, psi0: &StateVector, t: usize, f: &F) -> Result<f64> {
    Ok(tail_average_scan(u, psi0, &[t], f)?[0])
}

/// [`time_avg_tail`] for several `T` from a single trajectory. Runs to
/// `2 max(T)` steps; entries are returned in input order.
pub fn tail_average_scan<F: Profile + ?Sized>(
    u: &BandedUnitary,
    psi0: &StateVector,
    ts: &[usize],
    f: &F,
) -> Result<Vec<f64>> {
    let Some(&t_max) = ts.iter().max() else {
        return Ok(Vec::new());
    };
    let mut ev = Evolution::new(u, psi0, 2 * t_max)?;
    let g = u.geometry();
    // T / f(T) is increasing, so sorting by T sorts the thresholds too
    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.sort_by_key(|&k| ts[k]);
    let sorted: Vec<usize> = order.iter().map(|&k| ts[k]).collect();
    let first_index: Vec<i64> = sorted
        .iter()
        .map(|&t| Float::ceil(t as f64 / f.value(t as f64)) as i64 - g.first_site())
        .collect();
    let mut sums = vec![0.0; ts.len()];
    for j in 0..=2 * t_max {
        // T is averaging at step j exactly when j/2 ≤ T ≤ j
        let a = sorted.partition_point(|&t| 2 * t < j);
        let b = sorted.partition_point(|&t| t <= j);
        if a < b {
            let act = ev.active();
            let amps = ev.amplitudes();
            let mut upper = act.end;
            let mut acc = 0.0;
            for i in (a..b).rev() {
                let idx = (first_index[i].max(act.start as i64) as usize).min(upper);
                acc += mass(&amps[idx..upper]);
                upper = idx;
                sums[order[i]] += acc;
            }
        }
        if j < 2 * t_max {
            ev.advance();
        }
    }
    Ok(sums
        .iter()
        .zip(ts)
        .map(|(s, &t)| s / (t as f64 + 1.0))
        .collect())
}

/// `Σ |a_i|²` with four independent partial sums.
fn mass(a: &[Complex64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.chunks_exact(4);
    let rest = chunks.remainder();
    for c in chunks {
        for (s, v) in acc.iter_mut().zip(c) {
            *s += v.norm_sqr();
        }
    }
    rest.iter().map(|v| v.norm_sqr()).sum::<f64>() + (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Instability ratios of one moment-series row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioRow {
    pub n: u64,
    /// `⟨X²⟩(n) / F(n)` with `F(n) = n² / ln(2+n)`; `F(0)` is replaced by `ln 2`.
    pub over_f: f64,
    /// `⟨X²⟩(n) f(n)^5 / n²`; the `n² = 0` denominator is replaced by 1.
    pub f5_over_n2: f64,
}

pub fn instability_ratio<F: Profile + ?Sized>(series: &MomentSeries, f: &F) -> Result<Vec<RatioRow>> {
    let x2 = series
        .moment(2)
        .ok_or_else(|| invalid("orders", "the series does not contain m = 2"))?;
    Ok(series
        .rows
        .iter()
        .zip(x2)
        .map(|(row, m2)| {
            let n = row.n as f64;
            let (big_f, n2) = if row.n == 0 {
                (core::f64::consts::LN_2, 1.0)
            } else {
                (n * n / Float::ln(2.0 + n), n * n)
            };
            RatioRow {
                n: row.n,
                over_f: m2 / big_f,
                f5_over_n2: m2 * Float::powi(f.value(n), 5) / n2,
            }
        })
        .collect())
}

/// Both sides of the averaged projection inequality for `ξ = η + ψ`:
/// `lhs = (1/(T+1)) Σ_{j=T}^{2T} ‖(I-P) U^j ξ‖²` and
/// `rhs = ‖ψ‖² - 3 ((1/(T+1)) Σ_{j=T}^{2T} ‖P U^j ψ‖²)^{1/2}`,
/// with `P` the coordinate projection onto `p`.
pub fn projection_gap(
    u: &DMatrix<Complex64>,
    p: &[usize],
    eta: &DVector<Complex64>,
    psi: &DVector<Complex64>,
    t: usize,
) -> Result<(f64, f64)> {
    let n = u.nrows();
    if u.ncols() != n || eta.len() != n || psi.len() != n {
        return Err(invalid("dimension", "matrix and vectors disagree"));
    }
    if p.iter().any(|&i| i >= n) {
        return Err(invalid("projection", "index outside the space"));
    }
    if eta.dotc(psi).norm() > 1e-12 {
        return Err(invalid("decomposition", "eta and psi are not orthogonal"));
    }
    let mut xi = eta + psi;
    if Float::abs(xi.norm() - 1.0) > 1e-10 {
        return Err(invalid("xi", "eta + psi is not a unit vector"));
    }
    let mut in_p = vec![false; n];
    for &i in p {
        in_p[i] = true;
    }
    let proj_mass = |v: &DVector<Complex64>, inside: bool| -> f64 {
        v.iter()
            .zip(&in_p)
            .filter(|(_, &b)| b == inside)
            .map(|(x, _)| x.norm_sqr())
            .sum()
    };
    let mut ps = psi.clone();
    let (mut lhs, mut rhs_sum) = (0.0, 0.0);
    for j in 0..=2 * t {
        if j >= t {
            lhs += proj_mass(&xi, false);
            rhs_sum += proj_mass(&ps, true);
        }
        if j < 2 * t {
            xi = u * xi;
            ps = u * ps;
        }
    }
    let w = (t + 1) as f64;
    Ok((lhs / w, psi.norm_squared() - 3.0 * Float::sqrt(rhs_sum / w)))
}

/// Unitary `Q` factor of a complex matrix with entries drawn from `sample`,
/// with the phases of `diag(R)` divided out (Haar distributed for Gaussian input).
pub fn unitary_from_samples(n: usize, mut sample: impl FnMut() -> f64) -> DMatrix<Complex64> {
    let a = DMatrix::from_fn(n, n, |_, _| Complex64::new(sample(), sample()));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= ph;
        }
    }
    q
}
